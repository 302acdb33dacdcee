//! Prints the two nearest electrodes of every montage electrode on the unit
//! sphere, formatted as the `NEAREST_NEIGHBORS` table.

use lookaround_core::preprocess::montage::{unit_sphere, ELECTRODE_POSITIONS};

fn main() {
    let points: Vec<(&str, [f64; 3])> = ELECTRODE_POSITIONS
        .iter()
        .map(|&(name, az, r)| (name, unit_sphere(az, r)))
        .collect();
    println!(
        "pub const NEAREST_NEIGHBORS: [(&str, &str, &str); {}] = [",
        points.len()
    );
    for (name, p) in &points {
        let mut others: Vec<(f64, usize, &str)> = points
            .iter()
            .enumerate()
            .filter(|(_, (other, _))| other != name)
            .map(|(i, (other, q))| {
                let d = p
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                // Ties within 1e-9 fall back to table order.
                ((d * 1e9).round() / 1e9, i, *other)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        println!(
            "    (\"{name}\", \"{}\", \"{}\"),",
            others[0].2, others[1].2
        );
    }
    println!("];");
}
