// Friedman test over a datasets × algorithms score table.

use leand::evaluation::friedman;

fn main() -> leand::Result<()> {
    let algorithms = ["leand", "kde", "ae", "norecon"];
    // rows are datasets, higher is better
    let f1 = vec![
        vec![1.000, 0.962, 0.910, 0.981],
        vec![1.000, 0.988, 0.941, 0.951],
        vec![0.870, 0.846, 0.802, 0.823],
        vec![0.972, 0.955, 0.931, 0.960],
        vec![0.915, 0.920, 0.887, 0.901],
    ];
    let f = friedman(&f1)?;
    for (name, r) in algorithms.iter().zip(&f.mean_ranks) {
        println!("{name:<8} mean rank {r:.2}");
    }
    println!("Q = {:.4}, p = {:.4}", f.q, f.p_value);
    Ok(())
}
