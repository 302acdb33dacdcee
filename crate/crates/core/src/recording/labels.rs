//! Channel-label normalisation onto the 10-20 vocabulary.

/// Electrode names of the 10-20 system recognised by the reader, in their
/// canonical spelling.
pub const ELECTRODES: &[&str] = &[
    "Fp1", "Fp2", "Fpz", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3",
    "Pz", "P4", "T6", "O1", "Oz", "O2", "A1", "A2", "T1", "T2",
];

/// Modern 10-10 names that alias classic 10-20 positions.
const RENAMES: &[(&str, &str)] = &[("T7", "T3"), ("T8", "T4"), ("P7", "T5"), ("P8", "T6")];

/// Reference suffixes stripped from referential labels such as `EEG FP1-REF`.
const REFERENCE_SUFFIXES: &[&str] = &["REF", "LE", "AVG", "AR", "M1", "M2", "CAR", "AV"];

/// Normalise a single electrode name (`fp1`, `FP1`, `T7`) to its canonical
/// spelling, or `None` if it is not in the vocabulary.
pub fn canonical_electrode(name: &str) -> Option<&'static str> {
    let name = name.trim();
    let renamed = RENAMES
        .iter()
        .find(|(from, _)| from.eq_ignore_ascii_case(name))
        .map(|(_, to)| *to)
        .unwrap_or(name);
    ELECTRODES
        .iter()
        .copied()
        .find(|e| e.eq_ignore_ascii_case(renamed))
}

/// Normalise a vendor channel label.
///
/// Referential labels (`EEG FP1-REF`, `Fp1-LE`, `fp1`) map to the bare
/// electrode name. Bipolar labels whose two halves are both electrodes
/// (`FP2-F4`) map to a canonical derivation name (`Fp2-F4`). Anything else
/// (ECG, EMG, photic, annotation channels) yields `None`.
pub fn normalize_label(raw: &str) -> Option<String> {
    let mut label = raw.trim();
    for prefix in ["EEG ", "EEG-", "EEG"] {
        if label.len() > prefix.len() && label[..prefix.len()].eq_ignore_ascii_case(prefix) {
            label = label[prefix.len()..].trim();
            break;
        }
    }
    if let Some(e) = canonical_electrode(label) {
        return Some(e.to_string());
    }
    let (left, right) = label.split_once('-')?;
    let anode = canonical_electrode(left)?;
    let right = right.trim();
    if REFERENCE_SUFFIXES
        .iter()
        .any(|s| s.eq_ignore_ascii_case(right))
    {
        return Some(anode.to_string());
    }
    let cathode = canonical_electrode(right)?;
    Some(format!("{anode}-{cathode}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vendor_variants() {
        assert_eq!(normalize_label("EEG FP1-REF").as_deref(), Some("Fp1"));
        assert_eq!(normalize_label("EEG T7-LE").as_deref(), Some("T3"));
        assert_eq!(normalize_label("cz").as_deref(), Some("Cz"));
        assert_eq!(normalize_label("FP2-F4").as_deref(), Some("Fp2-F4"));
        assert_eq!(normalize_label("EEG P8-AVG").as_deref(), Some("T6"));
    }

    #[test]
    fn non_eeg_dropped() {
        assert_eq!(normalize_label("ECG"), None);
        assert_eq!(normalize_label("EDF Annotations"), None);
        assert_eq!(normalize_label("EMG-REF"), None);
        assert_eq!(normalize_label("PHOTIC PH"), None);
    }
}
