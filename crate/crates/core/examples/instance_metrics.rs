//! Instance-level scores on hand-made cases: a perfect match, a merged pair,
//! a split vehicle and a missed one.

use vinseg::mask_ops::InstanceLabelMap;
use vinseg::metrics::{instance_dice, instance_prf, match_instances};

fn show(name: &str, pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> vinseg::Result<()> {
    let m = match_instances(pred, gt)?;
    let s = instance_prf(m.tp, m.fp, m.fn_);
    println!(
        "{name:<10} TP {} FP {} FN {}  P {:.3} R {:.3} F1 {:.3}  Dice {:.4}",
        m.tp,
        m.fp,
        m.fn_,
        s.precision,
        s.recall,
        s.f1,
        instance_dice(pred, gt)?
    );
    Ok(())
}

fn row(ids: &[u32]) -> InstanceLabelMap {
    InstanceLabelMap::relabeled(1, ids.len(), ids.to_vec()).expect("row map")
}

fn main() -> vinseg::Result<()> {
    let gt = row(&[1, 1, 1, 1, 2, 2, 2, 2, 0, 3, 3, 3]);
    show("perfect", &gt, &gt)?;
    show("merged", &row(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 2, 2, 2]), &gt)?;
    show("split", &row(&[1, 1, 2, 2, 3, 3, 3, 3, 0, 4, 4, 4]), &gt)?;
    show("missed", &row(&[1, 1, 1, 1, 2, 2, 2, 2, 0, 0, 0, 0]), &gt)?;
    // one 8-pixel vehicle predicted as two 4-pixel halves
    show("halves", &row(&[1, 1, 1, 1, 2, 2, 2, 2]), &row(&[1; 8]))?;
    Ok(())
}
