//! Nadam, Adam and SGD with momentum on an ill-conditioned quadratic bowl.

use vinseg::optim::{AdamConfig, NadamConfig, Optimizer, OptimizerConfig, SgdConfig};
use vinseg::tensor::{Shape, Tensor};

fn main() -> vinseg::Result<()> {
    // f(x, y) = 0.5 (x^2 + 25 y^2), minimum at the origin
    let curvature = [1.0f32, 25.0];
    for cfg in [
        OptimizerConfig::Nadam(NadamConfig {
            lr: 0.05,
            ..Default::default()
        }),
        OptimizerConfig::Adam(AdamConfig {
            lr: 0.05,
            ..Default::default()
        }),
        OptimizerConfig::Sgd(SgdConfig {
            lr: 0.01,
            momentum: 0.9,
        }),
    ] {
        let mut params = vec![Tensor::new(Shape::new(1, 1, 1, 2), vec![2.0f32, 1.0])?];
        let mut opt = Optimizer::new(cfg, &params)?;
        let mut trace = Vec::new();
        for step in 1..=200 {
            let p = params[0].data();
            let grad = Tensor::new(
                params[0].shape(),
                vec![curvature[0] * p[0], curvature[1] * p[1]],
            )?;
            opt.step(&mut params, &[grad])?;
            if step % 50 == 0 {
                let p = params[0].data();
                trace.push(0.5 * (curvature[0] * p[0] * p[0] + curvature[1] * p[1] * p[1]));
            }
        }
        let name = match cfg {
            OptimizerConfig::Nadam(_) => "nadam",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::Sgd(_) => "sgd",
        };
        let fmt: Vec<String> = trace.iter().map(|v| format!("{v:.2e}")).collect();
        println!("{name:<5} loss at steps 50/100/150/200: {}", fmt.join(" "));
    }
    Ok(())
}
