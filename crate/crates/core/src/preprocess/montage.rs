//! Longitudinal bipolar montage and nearest-neighbour imputation.

use std::collections::BTreeMap;

use crate::recording::Recording;

use super::{PreprocessError, Result};

/// The 18 derivations, front-to-back chains right parasagittal, left
/// parasagittal, right temporal, left temporal, then midline.
pub const DERIVATIONS: [(&str, &str); 18] = [
    ("Fp2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
    ("Fp1", "F3"),
    ("F3", "C3"),
    ("C3", "P3"),
    ("P3", "O1"),
    ("Fp2", "F8"),
    ("F8", "T4"),
    ("T4", "T6"),
    ("T6", "O2"),
    ("Fp1", "F7"),
    ("F7", "T3"),
    ("T3", "T5"),
    ("T5", "O1"),
    ("Fz", "Cz"),
    ("Cz", "Pz"),
];

/// 10-20 electrodes referenced by the montage with their polar-projection
/// coordinates: azimuth in degrees (0 = nose, positive towards the right ear)
/// and radius (0 = vertex, 0.5 = the ear-nasion-inion circumference).
pub const ELECTRODE_POSITIONS: [(&str, f64, f64); 19] = [
    ("Fp1", -18.0, 0.511),
    ("Fp2", 18.0, 0.511),
    ("F7", -54.0, 0.511),
    ("F3", -39.0, 0.333),
    ("Fz", 0.0, 0.256),
    ("F4", 39.0, 0.333),
    ("F8", 54.0, 0.511),
    ("T3", -90.0, 0.511),
    ("C3", -90.0, 0.256),
    ("Cz", 90.0, 0.0),
    ("C4", 90.0, 0.256),
    ("T4", 90.0, 0.511),
    ("T5", -126.0, 0.511),
    ("P3", -141.0, 0.333),
    ("Pz", 180.0, 0.256),
    ("P4", 141.0, 0.333),
    ("T6", 126.0, 0.511),
    ("O1", -162.0, 0.511),
    ("O2", 162.0, 0.511),
];

/// Two nearest electrodes of each montage electrode on the unit sphere.
/// Equal distances (within 1e-9) are broken by [`ELECTRODE_POSITIONS`] order.
/// Regenerate with `cargo run -p lookaround-core --example derive_neighbors`.
pub const NEAREST_NEIGHBORS: [(&str, &str, &str); 19] = [
    ("Fp1", "Fp2", "F7"),
    ("Fp2", "Fp1", "F8"),
    ("F7", "F3", "Fp1"),
    ("F3", "Fz", "F7"),
    ("Fz", "F3", "F4"),
    ("F4", "Fz", "F8"),
    ("F8", "F4", "Fp2"),
    ("T3", "F7", "T5"),
    ("C3", "F3", "P3"),
    ("Cz", "Fz", "C3"),
    ("C4", "F4", "P4"),
    ("T4", "F8", "T6"),
    ("T5", "P3", "T3"),
    ("P3", "Pz", "T5"),
    ("Pz", "P3", "P4"),
    ("P4", "Pz", "T6"),
    ("T6", "P4", "T4"),
    ("O1", "T5", "O2"),
    ("O2", "T6", "O1"),
];

/// Cartesian position on the unit sphere from polar-projection coordinates.
pub fn unit_sphere(azimuth_deg: f64, radius: f64) -> [f64; 3] {
    let inclination = (radius * 180.0).to_radians();
    let azimuth = azimuth_deg.to_radians();
    [
        inclination.sin() * azimuth.cos(),
        inclination.sin() * azimuth.sin(),
        inclination.cos(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MontageSpec {
    pub derivations: Vec<(String, String)>,
    pub nearest_neighbors: BTreeMap<String, (String, String)>,
}

impl Default for MontageSpec {
    fn default() -> Self {
        Self::longitudinal_bipolar()
    }
}

impl MontageSpec {
    pub fn longitudinal_bipolar() -> Self {
        MontageSpec {
            derivations: DERIVATIONS
                .iter()
                .map(|&(a, c)| (a.to_string(), c.to_string()))
                .collect(),
            nearest_neighbors: NEAREST_NEIGHBORS
                .iter()
                .map(|&(e, n1, n2)| (e.to_string(), (n1.to_string(), n2.to_string())))
                .collect(),
        }
    }

    pub fn derivation_names(&self) -> Vec<String> {
        self.derivations
            .iter()
            .map(|(a, c)| format!("{a}-{c}"))
            .collect()
    }

    /// Electrodes referenced by the derivations, in first-use order.
    pub fn electrodes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (a, c) in &self.derivations {
            for e in [a, c] {
                if !out.contains(e) {
                    out.push(e.clone());
                }
            }
        }
        out
    }
}

/// Fills in montage electrodes absent from `rec` with the mean of their two
/// nearest electrodes. Channels already present are left untouched and only
/// originally present channels are used as sources.
pub fn impute_missing(rec: &Recording, spec: &MontageSpec) -> Result<Recording> {
    let mut labels = rec.channel_labels.clone();
    let mut samples = rec.samples.clone();
    for electrode in spec.electrodes() {
        if rec.channel_index(&electrode).is_some() {
            continue;
        }
        let (n1, n2) = spec.nearest_neighbors.get(&electrode).ok_or_else(|| {
            PreprocessError::Unrecoverable {
                electrode: electrode.clone(),
                missing: Vec::new(),
            }
        })?;
        match (rec.channel(n1), rec.channel(n2)) {
            (Some(a), Some(b)) => {
                samples.push(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect());
                labels.push(electrode);
            }
            (a, b) => {
                let missing = [(n1, a.is_none()), (n2, b.is_none())]
                    .into_iter()
                    .filter(|(_, m)| *m)
                    .map(|(n, _)| n.clone())
                    .collect();
                return Err(PreprocessError::Unrecoverable { electrode, missing });
            }
        }
    }
    Ok(rec.with_samples(labels, rec.fs, samples))
}

/// Derivation `i` is `anode_i − cathode_i`, sample by sample.
pub fn to_bipolar(rec: &Recording, spec: &MontageSpec) -> Result<Recording> {
    let mut samples = Vec::with_capacity(spec.derivations.len());
    for (anode, cathode) in &spec.derivations {
        let a = rec
            .channel(anode)
            .ok_or_else(|| PreprocessError::MissingElectrode(anode.clone()))?;
        let c = rec
            .channel(cathode)
            .ok_or_else(|| PreprocessError::MissingElectrode(cathode.clone()))?;
        samples.push(a.iter().zip(c).map(|(x, y)| x - y).collect());
    }
    Ok(rec.with_samples(spec.derivation_names(), rec.fs, samples))
}
