use std::collections::BTreeMap;
use std::path::PathBuf;

use attrib_core::corpus::{split_corpus, tile_grid, ArtworkRecord, Certainty, Label, Split, SplitRatios, TileRect};
use attrib_core::ensemble::{aggregate_image, balanced_accuracy, sweep_threshold, Decision, EnsemblePrediction, Fusion};
use attrib_core::metrics::evaluate_predictions;
use attrib_core::overlay::{render_confidence, render_uncertainty, OverlaySpec};
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn rect(i: usize) -> TileRect {
    TileRect {
        row: (i / 8) as u32,
        col: (i % 8) as u32,
        x: (i % 8) as u32 * 512,
        y: (i / 8) as u32 * 512,
        size: 512,
    }
}

fn probs() -> impl Strategy<Value = [f64; 5]> {
    prop::array::uniform5(0.0f64..=1.0)
}

fn preds(id: &str, vectors: &[[f64; 5]], tau: f64) -> Vec<EnsemblePrediction> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, p)| EnsemblePrediction::new(id, rect(i), *p, tau, Fusion::Mean).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn variance_bounded_and_zero_only_when_unanimous(p in probs()) {
        let e = EnsemblePrediction::new("a", rect(0), p, 0.5, Fusion::Mean).unwrap();
        prop_assert!(e.variance >= 0.0 && e.variance <= 0.25);
        let unanimous = p.iter().all(|&x| x == p[0]);
        prop_assert_eq!(e.variance == 0.0, unanimous);
    }

    #[test]
    fn aggregation_ignores_tile_order(vs in prop::collection::vec(probs(), 1..40), tau in 0.01f64..0.99, seed in any::<u64>()) {
        let a = preds("w", &vs, tau);
        let mut b = a.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        b.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (va, vb) = (aggregate_image(&a, tau).unwrap(), aggregate_image(&b, tau).unwrap());
        prop_assert_eq!(va.image_prob, vb.image_prob);
        prop_assert_eq!(va.tiles_positive, vb.tiles_positive);
        prop_assert_eq!(va.decision, vb.decision);
    }

    #[test]
    fn raising_tau_never_adds_positives(vs in prop::collection::vec(probs(), 1..40), t1 in 0.01f64..0.99, dt in 0.0f64..0.5) {
        let t2 = (t1 + dt).min(0.999);
        let ps = preds("w", &vs, t1);
        let (lo, hi) = (aggregate_image(&ps, t1).unwrap(), aggregate_image(&ps, t2).unwrap());
        prop_assert!(hi.tiles_positive <= lo.tiles_positive);
        prop_assert!(!(lo.decision == Decision::Inconsistent && hi.decision == Decision::ConsistentWithArtist));
        prop_assert!(hi.tiles_positive <= hi.tiles_total);
    }

    #[test]
    fn calibration_is_optimal_over_its_sweep(
        scores in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..30)
    ) {
        let mut scored: Vec<(f64, Label)> = scores.iter().map(|&(s, p)| (s, Label::from_target(p))).collect();
        scored[0].1 = Label::Positive;
        scored[1].1 = Label::Negative;
        let cal = sweep_threshold(&scored).unwrap();
        for c in &cal.trace {
            prop_assert!(balanced_accuracy(&scored, c.threshold) <= cal.balanced_accuracy + 1e-12);
        }
        prop_assert!((balanced_accuracy(&scored, cal.threshold) - cal.balanced_accuracy).abs() < 1e-12);
    }

    #[test]
    fn label_flip_preserves_accuracy(
        works in prop::collection::vec((prop::collection::vec(probs(), 1..6), any::<bool>()), 1..8),
        tau in 0.05f64..0.95
    ) {
        let mut original = Vec::new();
        let mut flipped = Vec::new();
        for (w, (vs, pos)) in works.iter().enumerate() {
            let id = format!("w{w}");
            let label = Label::from_target(*pos);
            let inverse: Vec<[f64; 5]> = vs.iter().map(|p| p.map(|x| 1.0 - x)).collect();
            original.extend(preds(&id, vs, tau).into_iter().map(|p| (p, label)));
            flipped.extend(preds(&id, &inverse, 1.0 - tau).into_iter().map(|p| (p, Label::from_target(!pos))));
        }
        // away from the boundary the strict and non-strict rules agree
        let near = |v: f64| (v - tau).abs() < 1e-9;
        prop_assume!(original.iter().all(|(p, _)| !near(p.mean)));
        let a = evaluate_predictions(&original, tau).unwrap();
        prop_assume!(a.verdicts.iter().all(|v| !near(v.image_prob)));
        let b = evaluate_predictions(&flipped, 1.0 - tau).unwrap();
        prop_assert!((a.tile_accuracy - b.tile_accuracy).abs() < 1e-12);
        prop_assert!((a.image_accuracy - b.image_accuracy).abs() < 1e-12);
    }

    #[test]
    fn accuracies_match_confusion(vs in prop::collection::vec((probs(), 0usize..4), 1..30), tau in 0.05f64..0.95) {
        let labelled: Vec<_> = vs.iter().enumerate().map(|(i, (p, w))| {
            let label = Label::from_target(*w % 2 == 0);
            (EnsemblePrediction::new(format!("w{w}"), rect(i), *p, tau, Fusion::Mean).unwrap(), label)
        }).collect();
        let r = evaluate_predictions(&labelled, tau).unwrap();
        prop_assert_eq!(r.tile_confusion.total(), labelled.len());
        prop_assert_eq!(r.image_confusion.total(), r.verdicts.len());
        prop_assert!((r.tile_accuracy - r.tile_confusion.correct() as f64 / labelled.len() as f64).abs() < 1e-15);
        // re-derive verdicts from raw tiles
        for v in &r.verdicts {
            let tiles: Vec<_> = labelled.iter().filter(|(p, _)| p.artwork_id == v.artwork_id).map(|(p, _)| p.clone()).collect();
            let again = aggregate_image(&tiles, tau).unwrap();
            prop_assert_eq!(again.decision, v.decision);
            prop_assert_eq!(again.tiles_positive, v.tiles_positive);
        }
    }

    #[test]
    fn tile_grid_shape(w in 512u32..6000, h in 512u32..6000) {
        let g = tile_grid(w, h).unwrap();
        prop_assert_eq!(g.len() as u32, w.div_ceil(512) * h.div_ceil(512));
        prop_assert!(g.iter().all(|r| r.x + r.size <= w && r.y + r.size <= h));
        prop_assert!(g.windows(2).all(|p| (p[0].row, p[0].col) < (p[1].row, p[1].col)));
    }

    #[test]
    fn split_never_leaks(sizes in prop::collection::vec((1usize..40, any::<bool>()), 8..40), seed in any::<u64>()) {
        let mut records = Vec::new();
        let mut counts = BTreeMap::new();
        for (i, (tiles, pos)) in sizes.iter().enumerate() {
            let id = format!("A{i:03}");
            records.push(ArtworkRecord {
                artwork_id: id.clone(),
                title: id.clone(),
                label: Label::from_target(*pos),
                certainty: Certainty::Certain1,
                image_path: PathBuf::from("x.png"),
                px_per_mm: 6.0,
                width_px: 512,
                height_px: 512,
            });
            counts.insert(id, *tiles);
        }
        let pos = sizes.iter().filter(|s| s.1).count();
        prop_assume!(pos >= 3 && sizes.len() - pos >= 3);
        let s = split_corpus(&records, &counts, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(s.assignments.len(), records.len());
        for sp in Split::ALL {
            let c = s.counts(sp);
            prop_assert!(c.works_negative >= 1 && c.works_positive >= 1);
        }
        let again = split_corpus(&records, &counts, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(again, s);
    }
}

fn canvas(w: u32, h: u32, v: u8) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb([v, v / 2, 255 - v]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn overlays_keep_dimensions_and_colour_rule(
        w in 512u32..1300, h in 512u32..1300, seed in any::<u64>(), tau in 0.05f64..0.95
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = canvas(w, h, 90);
        let grid = tile_grid(w, h).unwrap();
        let ps: Vec<_> = grid.iter().map(|r| {
            let p: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
            EnsemblePrediction::new("x", *r, p, tau, Fusion::Mean).unwrap()
        }).collect();
        let spec = OverlaySpec::default();
        let unc = render_uncertainty(&img, &grid, &ps, &spec).unwrap();
        let conf = render_confidence(&img, &grid, &ps, tau, &spec).unwrap();
        prop_assert_eq!(unc.dimensions(), img.dimensions());
        prop_assert_eq!(conf.dimensions(), img.dimensions());
        // the last tile is drawn last, so its interior shows its own tint
        let (last, p) = (grid.last().unwrap(), ps.last().unwrap());
        let px = conf.get_pixel(last.x + last.size - 1, last.y + last.size - 1).0;
        let base = img.get_pixel(0, 0).0;
        if p.above_threshold {
            prop_assert!(px[1] >= base[1] && px[0] <= base[0]);
        } else {
            prop_assert!(px[0] >= base[0] && px[1] <= base[1]);
        }
    }

    #[test]
    fn more_variance_more_red(v1 in 0.0f64..0.25, v2 in 0.0f64..0.25, base in 0u8..=255) {
        let spec = OverlaySpec::default();
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let b = [base, base, base];
        let red = |v: f64| attrib_core::overlay::blend(b, spec.uncertainty_color, spec.uncertainty_alpha(v))[0];
        prop_assert!(red(hi) >= red(lo));
        let sat = |m: f64| spec.confidence_tint(m, 0.6).1;
        prop_assert!(sat(0.6 + hi) >= sat(0.6 + lo));
    }
}
