//! Finite-difference check of the full two-branch toy model.
//!
//! `cargo run --example gradcheck -- [seed] [lambda]`

fn main() -> vinseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let lambda: f64 = args.next().map_or(0.1, |s| s.parse().expect("lambda"));
    let report = vinseg::model::toy_gradient_check(seed, lambda, 1e-6)?;
    println!(
        "seed {seed}, lambda {lambda}: {} parameters, max relative error {:.3e}",
        report.checked, report.max_rel_error
    );
    if let Some((tensor, element)) = report.worst {
        println!("worst entry: tensor {tensor}, element {element}");
    }
    Ok(())
}
