use std::collections::BTreeSet;

use hsi_core::registry::hrss_class_counts;
use hsi_core::splits::{
    assign_hrss_split, export_split, import_split, load_fixed_split, reduce_train_ratio, SplitAssignment, SplitSpec,
    SplitTag, Unit,
};
use hsi_core::LabelMask;
use ndarray::Array2;
use proptest::prelude::*;

/// A mask whose classes hold exactly `counts` pixels, laid out in scan order.
fn mask_from_counts(counts: &[usize]) -> LabelMask {
    let total: usize = counts.iter().sum();
    let w = (total as f64).sqrt().ceil() as usize;
    let h = total.div_ceil(w);
    let mut labels = Array2::from_elem((w, h), LabelMask::DEFAULT_IGNORE);
    let mut cells = labels.iter_mut();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            *cells.next().unwrap() = c as u16;
        }
    }
    LabelMask::new(labels, (0..counts.len()).map(|c| format!("c{c}")).collect(), LabelMask::DEFAULT_IGNORE).unwrap()
}

const TABLE7: [(&str, f64, (usize, usize, usize)); 9] = [
    ("indian_pines", 0.05, (385, 120, 9744)),
    ("indian_pines", 0.1, (770, 248, 9231)),
    ("indian_pines", 0.3, (2307, 760, 7182)),
    ("pavia_university", 0.05, (1605, 530, 40641)),
    ("pavia_university", 0.1, (3208, 1065, 38503)),
    ("pavia_university", 0.3, (9625, 3204, 29947)),
    ("salinas", 0.05, (2029, 668, 51432)),
    ("salinas", 0.1, (4059, 1344, 48726)),
    ("salinas", 0.3, (12179, 4052, 37898)),
];

#[test]
fn published_split_sizes_reproduced() {
    for (scene, r, expected) in TABLE7 {
        let m = mask_from_counts(hrss_class_counts(scene).unwrap());
        let a = assign_hrss_split(&m, &SplitSpec::new(scene, r, 0)).unwrap();
        assert_eq!(a.sizes(), expected, "{scene} r={r}");
    }
}

#[test]
fn published_rows_share_a_total_per_scene() {
    for (scene, total) in [("indian_pines", 10_249), ("pavia_university", 42_776), ("salinas", 54_129)] {
        assert_eq!(hrss_class_counts(scene).unwrap().iter().sum::<usize>(), total);
        for (_, _, (a, b, c)) in TABLE7.iter().filter(|row| row.0 == scene) {
            assert_eq!(a + b + c, total);
        }
    }
}

#[test]
fn reduction_matches_direct_assignment() {
    let m = mask_from_counts(hrss_class_counts("indian_pines").unwrap());
    let spec = SplitSpec::new("indian_pines", 0.3, 0);
    let full = assign_hrss_split(&m, &spec).unwrap();
    let reduced = reduce_train_ratio(&full, 0.05, &spec).unwrap();
    let direct = assign_hrss_split(&m, &SplitSpec::new("indian_pines", 0.05, 0)).unwrap();
    assert_eq!(reduced.train.len() + reduced.val.len(), 505);
    assert_eq!(reduced.train, direct.train);
    assert_eq!(reduced.val, direct.val);
    assert_eq!(reduced.test, full.test);
    assert_eq!(reduced.len(), full.len());
}

#[test]
fn export_line_count_equals_labeled_pixels() {
    let m = mask_from_counts(hrss_class_counts("indian_pines").unwrap());
    let a = assign_hrss_split(&m, &SplitSpec::new("indian_pines", 0.05, 0)).unwrap();
    let text = export_split(&a);
    assert_eq!(text.lines().count(), 10_249);
    assert_eq!(export_split(&import_split(&text).unwrap()), text);
}

fn fixed_entry(train: &[&str], val: &[&str], test: &[&str]) -> hsi_core::registry::ManifestEntry {
    let m = hsi_core::registry::builtin_manifest();
    let mut e = m.entry_by_id("fruit/avocado/specim_fx10/objectwise/ripeness").unwrap().clone();
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    e.splits = hsi_core::registry::SplitSource::Fixed {
        sizes: [train.len(), val.len(), test.len()],
        train: ids(train),
        val: ids(val),
        test: ids(test),
    };
    e
}

#[test]
fn fixed_split_sizes_and_overlap() {
    let names: Vec<String> = (0..190).map(|i| format!("rec{i:03}")).collect();
    let n: Vec<&str> = names.iter().map(String::as_str).collect();
    let e = fixed_entry(&n[..142], &n[142..166], &n[166..]);
    let a = load_fixed_split(&e).unwrap();
    assert_eq!(a.sizes(), (142, 24, 24));

    let bad = fixed_entry(&["a", "b"], &["b"], &["c"]);
    assert!(load_fixed_split(&bad).is_err());

    let builtin = hsi_core::registry::builtin_manifest();
    let debris = builtin.entry_by_id("debris/debris/corning_microhsi_410/objectwise").unwrap();
    match &debris.splits {
        hsi_core::registry::SplitSource::Fixed { sizes, .. } => assert_eq!(*sizes, [50, 10, 10]),
        other => panic!("unexpected split source {other:?}"),
    }
    // sizes without membership lists cannot be loaded
    assert!(load_fixed_split(debris).is_err());
}

fn pixel_sets(a: &SplitAssignment) -> [BTreeSet<Unit>; 3] {
    [SplitTag::Train, SplitTag::Val, SplitTag::Test].map(|t| a.get(t).iter().cloned().collect())
}

fn random_mask(w: usize, h: usize, classes: usize, cells: &[u16]) -> Option<LabelMask> {
    let labels = Array2::from_shape_fn((w, h), |(x, y)| {
        let v = cells[(x * h + y) % cells.len()] % (classes as u16 + 1);
        if v as usize == classes {
            LabelMask::DEFAULT_IGNORE
        } else {
            v
        }
    });
    LabelMask::new(labels, (0..classes).map(|c| c.to_string()).collect(), LabelMask::DEFAULT_IGNORE).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_invariants(
        w in 5usize..40,
        h in 5usize..40,
        classes in 2usize..8,
        cells in prop::collection::vec(any::<u16>(), 1..200),
        r_idx in 0usize..3,
        seed in 0u64..1000,
    ) {
        let Some(mask) = random_mask(w, h, classes, &cells) else { return Ok(()); };
        let ratios = [0.1, 0.3, 0.6];
        let r = ratios[r_idx];
        let spec = SplitSpec::new("prop", r, seed);
        let a = match assign_hrss_split(&mask, &spec) {
            Ok(a) => a,
            Err(hsi_core::Error::EmptyTrainingSet) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        // determinism
        prop_assert_eq!(&assign_hrss_split(&mask, &spec).unwrap(), &a);
        // disjoint and covering
        let [tr, va, te] = pixel_sets(&a);
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert_eq!(tr.len() + va.len() + te.len(), mask.labeled_count());
        // per-class floor rule
        for (c, n) in mask.class_counts().into_iter().enumerate() {
            let count = |s: &BTreeSet<Unit>| s.iter().filter(|u| matches!(u, Unit::Pixel { class, .. } if *class as usize == c)).count();
            let n_tv = count(&tr) + count(&va);
            prop_assert!((r * n as f64 - n_tv as f64) < 1.0 && n_tv as f64 <= r * n as f64 + 1e-9);
            prop_assert_eq!(count(&va), (0.25 * n_tv as f64 + 1e-9).floor() as usize);
        }
        // nesting: train+val at a smaller ratio is contained in train+val at a larger one
        let smaller = ratios[..r_idx].iter().copied();
        for r1 in smaller {
            if let Ok(b) = assign_hrss_split(&mask, &SplitSpec::new("prop", r1, seed)) {
                let [btr, bva, _] = pixel_sets(&b);
                let tv: BTreeSet<_> = tr.union(&va).collect();
                prop_assert!(btr.iter().chain(bva.iter()).all(|u| tv.contains(u)));
                // reduction reproduces the direct assignment when no class empties
                if let Ok(red) = reduce_train_ratio(&a, r1, &spec) {
                    prop_assert_eq!(&red.train, &b.train);
                    prop_assert_eq!(&red.val, &b.val);
                    prop_assert_eq!(&red.test, &a.test);
                }
            }
        }
    }
}
