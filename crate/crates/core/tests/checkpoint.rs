use vinseg::checkpoint::{decode, encode, index, load, save, MAGIC, VERSION};
use vinseg::model::{joint_loss, Model, ModelConfig};
use vinseg::optim::{Optimizer, OptimizerConfig, SgdConfig};
use vinseg::tensor::{Graph, Shape, Tensor};

fn image() -> Tensor {
    let shape = Shape::new(1, 3, 64, 64);
    let data = (0..shape.numel())
        .map(|i| ((i * 37) % 101) as f32 / 101.0)
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// A model and Nadam state after one training step, so every stored tensor
/// differs from its initial value.
fn trained() -> (Model, Optimizer) {
    let mut model: Model = Model::new(ModelConfig::boundary_aware(12)).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::default(), model.params()).unwrap();
    let mut g = Graph::new();
    let params = model.param_leaves(&mut g, true);
    let x = g.leaf(image(), false);
    let p = model.forward_train(&mut g, &params, x).unwrap();
    let y = Tensor::full(Shape::new(1, 1, 64, 64), 1.0);
    let loss = joint_loss(&mut g, p.seg, p.boundary, &y, Some(&y), 0.1).unwrap();
    g.backward(loss).unwrap();
    let grads: Vec<Tensor> = params.iter().map(|&v| g.grad(v).unwrap()).collect();
    opt.step(model.params_mut(), &grads).unwrap();
    (model, opt)
}

fn predict(model: &Model) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let x = g.leaf(image(), false);
    let p = model.forward(&mut g, x).unwrap();
    (g.value(p.seg).clone(), g.value(p.boundary.unwrap()).clone())
}

#[test]
fn round_trip_is_bit_exact() {
    let (model, opt) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&path, &model, Some(&opt), 3, &[1.5, 1.25, 1.0]).unwrap();
    let ck = load(&path).unwrap();
    assert_eq!(ck.model, model);
    assert_eq!(ck.optimizer.as_ref(), Some(&opt));
    assert_eq!(ck.epoch, 3);
    assert_eq!(ck.val_history, vec![1.5, 1.25, 1.0]);
    assert_eq!(predict(&ck.model), predict(&model));
}

#[test]
fn layout_and_index() {
    let (model, _) = trained();
    let bytes = encode(&model, None, 0, &[]).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(
        u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        VERSION
    );
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + header_len]).unwrap();
    assert!(header["config"].is_object());

    let entries = index(&bytes).unwrap();
    let payload = &bytes[20 + header_len..];
    let total: u64 = entries.iter().map(|e| e.length).sum();
    assert_eq!(total as usize, payload.len());
    let mut offset = 0;
    for e in &entries {
        assert_eq!(e.offset, offset);
        offset += e.length;
    }
    let first = &entries[0];
    assert_eq!(first.name, model.param_names()[0]);
    let v = f32::from_le_bytes(payload[..4].try_into().unwrap());
    assert_eq!(v, model.params()[0].data()[0]);
    assert!(entries.iter().any(|e| e.name == "stem.bn.running_var"));
    assert!(!entries.iter().any(|e| e.name.starts_with("optim.")));
    let ck = decode(&bytes).unwrap();
    assert!(ck.optimizer.is_none());
}

#[test]
fn sgd_state_round_trips_without_second_moment() {
    let model: Model = Model::new(ModelConfig::resfcn(1)).unwrap();
    let opt = Optimizer::new(OptimizerConfig::Sgd(SgdConfig::default()), model.params()).unwrap();
    let ck = decode(&encode(&model, Some(&opt), 0, &[]).unwrap()).unwrap();
    assert_eq!(ck.optimizer, Some(opt));
}

#[test]
fn corrupt_containers_are_rejected() {
    let model: Model = Model::new(ModelConfig::resfcn(1)).unwrap();
    let bytes = encode(&model, None, 0, &[]).unwrap();

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(decode(&wrong_magic).is_err());

    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    assert!(decode(&wrong_version).is_err());

    assert!(decode(&bytes[..bytes.len() - 4]).is_err());
    assert!(decode(&bytes[..30]).is_err());
    assert!(decode(&[]).is_err());

    let mut huge_header = bytes.clone();
    huge_header[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode(&huge_header).is_err());

    let dir = tempfile::tempdir().unwrap();
    assert!(load(&dir.path().join("absent.ckpt")).is_err());
}
