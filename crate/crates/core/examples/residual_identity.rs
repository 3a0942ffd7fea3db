//! Zeroing the residual branches of a block chain leaves only the identity
//! skips, so values pass forward and gradients pass backward unchanged.

use vinseg::model::{residual_block_forward, Model, ModelConfig, NormMode};
use vinseg::tensor::{Graph, Shape, Tensor};

fn main() -> vinseg::Result<()> {
    let mut cfg = ModelConfig::resfcn(8);
    cfg.backbone.blocks_per_stage = [7, 1, 1];
    let mut model: Model = Model::new(cfg)?;
    for i in 1..=6 {
        for conv in ["conv1", "conv2"] {
            let name = format!("stage1.block{i}.{conv}.conv.weight");
            model
                .param_mut(&name)
                .expect("parameter")
                .data_mut()
                .fill(0.0);
        }
    }
    let chain = model.stages()[0][1..].to_vec();
    let shape = Shape::new(1, 16, 8, 8);
    let x = Tensor::new(
        shape,
        (0..shape.numel())
            .map(|i| (i % 13) as f32 * 0.25 + 0.5)
            .collect(),
    )?;
    // strictly positive input: the post-add ReLU passes it and its gradient untouched
    let upstream = Tensor::new(
        shape,
        (0..shape.numel())
            .map(|i| ((i % 7) as f32 - 3.0) * 0.5)
            .collect(),
    )?;

    let mut g = Graph::new();
    let params = model.param_leaves(&mut g, true);
    let xv = g.leaf(x.clone(), true);
    let mut states = model.bn_states().to_vec();
    let mut norm = NormMode::Train(&mut states);
    let mut h = xv;
    for block in &chain {
        h = residual_block_forward(&mut g, &params, h, block, &mut norm)?;
    }
    // batch of one: a 1x1 "convolution" with kernel u is sum(h * u)
    let u = g.leaf(upstream.clone(), false);
    let dot = g.conv2d(h, u, None, 1, 0)?;
    let loss = g.sum(dot)?;
    g.backward(loss)?;

    println!("{} blocks", chain.len());
    println!("output == input: {}", g.value(h) == &x);
    println!(
        "input gradient == upstream gradient: {}",
        g.grad(xv).expect("gradient") == upstream
    );
    Ok(())
}
