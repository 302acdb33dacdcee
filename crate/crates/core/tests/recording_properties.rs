use lookaround_core::recording::annotations::parse_annotations;
use lookaround_core::recording::edf::{decode_edf, encode_edf, parse_header};
use lookaround_core::recording::{AnnotationSet, EventLabel, Recording, SeizureEvent};
use proptest::prelude::*;
use std::path::Path;

const LABELS: [&str; 4] = ["Fp1", "Cz", "O2", "T3"];

fn recording_strategy() -> impl Strategy<Value = Recording> {
    (
        1usize..=4,
        1usize..=3,
        prop::sample::select(vec![128.0, 200.0, 256.0]),
        1.0f64..5000.0,
    )
        .prop_flat_map(|(channels, seconds, fs, amplitude)| {
            let n = seconds * fs as usize;
            prop::collection::vec(prop::collection::vec(-amplitude..amplitude, n), channels)
                .prop_map(move |rows| {
                    let labels = LABELS[..rows.len()].iter().map(|s| s.to_string()).collect();
                    Recording::new("fixture", "p", labels, fs, rows).unwrap()
                })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn edf_round_trip_within_one_quantum(rec in recording_strategy()) {
        let bytes = encode_edf(&rec).unwrap();
        let header = parse_header(&bytes).unwrap();
        let back = decode_edf(&bytes, "fixture").unwrap();
        prop_assert_eq!(&back.channel_labels, &rec.channel_labels);
        prop_assert_eq!(back.fs, rec.fs);
        for ((orig, got), sig) in rec.samples.iter().zip(&back.samples).zip(&header.signals) {
            let quantum = (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min) as f64;
            prop_assert_eq!(orig.len(), got.len());
            for (a, b) in orig.iter().zip(got) {
                prop_assert!((a - b).abs() <= quantum, "{} vs {} (quantum {})", a, b, quantum);
            }
        }
    }

    #[test]
    fn annotation_normalisation_idempotent_and_order_free(
        rows in prop::collection::vec((0.0f64..500.0, 0.5f64..60.0, any::<bool>()), 0..12),
        seed in any::<u64>(),
    ) {
        let events: Vec<SeizureEvent> = rows
            .iter()
            .map(|&(onset, dur, sz)| SeizureEvent {
                onset_s: onset,
                duration_s: dur,
                label: if sz { EventLabel::Seizure } else { EventLabel::Background },
            })
            .collect();
        let a = AnnotationSet::from_events("r", events.clone());
        let b = AnnotationSet::from_events("r", a.events.clone());
        prop_assert_eq!(&a, &b);

        let mut shuffled = events;
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(&AnnotationSet::from_events("r", shuffled), &a);
        for w in a.events.windows(2) {
            prop_assert!(w[0].end_s() < w[1].onset_s);
        }
    }
}

#[test]
fn tsv_examples() {
    let p = Path::new("a.tsv");
    let set = parse_annotations(
        "onset\tduration\teventType\n10\t20\tsz\n25\t10\tsz\n",
        "r",
        100.0,
        p,
    )
    .unwrap();
    assert_eq!(set.intervals(), vec![(10.0, 35.0)]);
    let set = parse_annotations("onset\tduration\teventType\n0\t5\tbckg\n", "r", 100.0, p).unwrap();
    assert!(set.events.is_empty());
    assert!(
        parse_annotations("onset\tduration\teventType\n3590\t20\tsz\n", "r", 3600.0, p).is_err()
    );
}
