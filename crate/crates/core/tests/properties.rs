use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use subitize::data::{
    category_table, featurize, generate_synthetic, BBox, EmbeddingTable, FeatureGrid, Instance, Raster, SceneAnnotation,
    SynthConfig,
};
use subitize::detboost::{count_guided_select, f_measure, match_detections, MATCH_IOU};
use subitize::detcount::{detect_count, iou, nms, Detection, DetectionSet, ThresholdConfig};
use subitize::gridgt::{aggregate_counts, cell_ground_truth, make_partition, CellCounts, ImageCounts};
use subitize::metrics::{
    count_bias_stats, count_error_profile, ensemble, evaluate_splits, postprocess, postprocess_all, rel_rmse, rmse,
};
use subitize::models::{grouped_softmax, ArchConfig, CountModel, ModelKind};
use subitize::qa::{answer_count, build_countqa, resolve_category, synthetic_embeddings, synthetic_questions};
use subitize::rng::stream;

fn scene(width: u32, height: u32, boxes: &[(f64, f64, f64, f64, u64)]) -> SceneAnnotation {
    SceneAnnotation {
        image_id: 1,
        width,
        height,
        instances: boxes
            .iter()
            .map(|&(x, y, w, h, category_id)| Instance {
                category_id,
                bbox: BBox::new(x, y, w, h),
            })
            .collect(),
    }
}

/// Image size with boxes lying fully inside it.
fn inside_scene() -> impl Strategy<Value = SceneAnnotation> {
    (10u32..200, 10u32..200).prop_flat_map(|(w, h)| {
        let b = (0.0..1.0f64, 0.0..1.0f64, 0.01..1.0f64, 0.01..1.0f64, 1u64..=3).prop_map(move |(fx, fy, fw, fh, k)| {
            let bw = fw * (f64::from(w) - 0.5) + 0.25;
            let bh = fh * (f64::from(h) - 0.5) + 0.25;
            (fx * (f64::from(w) - bw), fy * (f64::from(h) - bh), bw, bh, k)
        });
        prop::collection::vec(b, 0..12).prop_map(move |boxes| scene(w, h, &boxes))
    })
}

/// Boxes may stick out of the image but always overlap it.
fn clipped_scene() -> impl Strategy<Value = SceneAnnotation> {
    (10u32..200, 10u32..200).prop_flat_map(|(w, h)| {
        let (wf, hf) = (f64::from(w), f64::from(h));
        let b = (-0.5..0.95f64, -0.5..0.95f64, 0.05..1.0f64, 0.05..1.0f64, 1u64..=3)
            .prop_map(move |(fx, fy, fw, fh, k)| (fx * wf, fy * hf, fw * wf + 0.6 * wf, fh * hf + 0.6 * hf, k));
        prop::collection::vec(b, 1..8).prop_map(move |boxes| scene(w, h, &boxes))
    })
}

fn counts(n: usize, k: usize) -> impl Strategy<Value = Vec<ImageCounts>> {
    prop::collection::vec(prop::collection::vec(-2.0..12.0f64, k).prop_map(ImageCounts), n)
}

fn gt_counts(n: usize, k: usize) -> impl Strategy<Value = Vec<ImageCounts>> {
    prop::collection::vec(
        prop::collection::vec(0u32..10, k).prop_map(|v| ImageCounts(v.into_iter().map(f64::from).collect())),
        n,
    )
}

fn detection() -> impl Strategy<Value = Detection> {
    (0.0..20.0f64, 0.0..20.0f64, 1.0..8.0f64, 1.0..8.0f64, 0u32..=20, 1u64..=2).prop_map(|(x, y, w, h, s, c)| Detection {
        bbox: BBox::new(x, y, w, h),
        score: f64::from(s) / 20.0,
        category_id: c,
    })
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..20.0f64, 0.0..20.0f64, 1.0..8.0f64, 1.0..8.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

proptest! {
    #[test]
    fn partition_tiles_the_image(w in 1u32..300, h in 1u32..300, rows in 1usize..12, cols in 1usize..12) {
        prop_assume!(rows as u32 <= h && cols as u32 <= w);
        let p = make_partition(w, h, rows, cols).unwrap();
        let cells = p.cell_boxes();
        let total: f64 = cells.iter().map(BBox::area).sum();
        prop_assert_eq!(total, f64::from(w) * f64::from(h));
        for (i, a) in cells.iter().enumerate() {
            prop_assert!(a.area() > 0.0);
            for b in &cells[..i] {
                prop_assert_eq!(a.intersection_area(b), 0.0);
            }
        }
        let widths: Vec<u32> = (0..cols).map(|c| { let (a, b) = p.col_span(c); b - a }).collect();
        prop_assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
    }

    #[test]
    fn ground_truth_conserves_counts(s in inside_scene(), rows in 1usize..8, cols in 1usize..8) {
        let categories = category_table(3);
        let p = make_partition(s.width, s.height, rows.min(s.height as usize), cols.min(s.width as usize)).unwrap();
        let gt = cell_ground_truth(&s, &p, &categories).unwrap();
        prop_assert!(gt.values.iter().all(|&v| v >= 0.0));
        let agg = aggregate_counts(&gt);
        for (a, b) in agg.0.iter().zip(s.instance_counts(&categories)) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn ground_truth_mass_is_clipped_area_share(s in clipped_scene(), rows in 1usize..8, cols in 1usize..8) {
        let categories = category_table(3);
        let p = make_partition(s.width, s.height, rows, cols).unwrap();
        let gt = cell_ground_truth(&s, &p, &categories).unwrap();
        let image = BBox::new(0.0, 0.0, f64::from(s.width), f64::from(s.height));
        let mut expected = vec![0.0; 3];
        for inst in &s.instances {
            expected[categories.index_of(inst.category_id).unwrap()] += inst.bbox.intersection_area(&image) / inst.bbox.area();
        }
        for (a, b) in aggregate_counts(&gt).0.iter().zip(expected) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fine_grid_sums_to_coarse_grid(s in clipped_scene()) {
        let categories = category_table(3);
        let fine = cell_ground_truth(&s, &make_partition(s.width, s.height, 6, 6).unwrap(), &categories).unwrap();
        let coarse = cell_ground_truth(&s, &make_partition(s.width, s.height, 3, 3).unwrap(), &categories).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..3 {
                    let sum: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dr, dc)| fine.get((2 * r + dr) * 6 + 2 * c + dc, k))
                        .sum();
                    prop_assert!((sum - coarse.get(r * 3 + c, k)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn aggregation_is_monotone_and_non_negative(
        values in prop::collection::vec(-5.0..5.0f64, 18),
        cell in 0usize..9,
        k in 0usize..2,
        bump in 0.0..3.0f64,
    ) {
        let cells = CellCounts { rows: 3, cols: 3, categories: 2, values };
        let before = aggregate_counts(&cells);
        let mut raised = cells.clone();
        raised.values[cell * 2 + k] += bump;
        let after = aggregate_counts(&raised);
        prop_assert!(before.0.iter().all(|&v| v >= 0.0));
        for j in 0..2 {
            prop_assert!(after.get(j) >= before.get(j));
        }
    }

    #[test]
    fn postprocess_is_idempotent(raw in prop::collection::vec(-1e6..1e6f64, 0..10)) {
        let once = postprocess(&ImageCounts(raw)).unwrap();
        prop_assert!(once.0.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        prop_assert_eq!(postprocess(&once).unwrap(), once);
    }

    #[test]
    fn rel_rmse_never_exceeds_rmse((preds, gts) in (1usize..30).prop_flat_map(|n| (counts(n, 3), gt_counts(n, 3)))) {
        for k in 0..3 {
            prop_assert!(rel_rmse(&preds, &gts, k).unwrap() <= rmse(&preds, &gts, k).unwrap() + 1e-12);
        }
    }

    #[test]
    fn rmse_is_zero_exactly_on_agreement((preds, gts) in (1usize..30).prop_flat_map(|n| (counts(n, 2), gt_counts(n, 2)))) {
        let pp = postprocess_all(&preds).unwrap();
        for k in 0..2 {
            let equal = pp.iter().zip(&gts).all(|(p, g)| p.get(k) == g.get(k));
            prop_assert_eq!(rmse(&pp, &gts, k).unwrap() == 0.0, equal);
            prop_assert_eq!(rmse(&gts, &gts, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_resample_gives_plain_metrics((preds, gts) in (1usize..30).prop_flat_map(|n| (counts(n, 2), gt_counts(n, 2)))) {
        let categories = category_table(2);
        let identity: Vec<usize> = (0..preds.len()).collect();
        let report = evaluate_splits(&preds, &gts, &categories, &[identity]).unwrap();
        prop_assert_eq!(report.mean_bootstrap.rmse.mean, report.mean.rmse);
        prop_assert_eq!(report.mean_bootstrap.rmse.std, 0.0);
    }

    #[test]
    fn profile_buckets_recombine((preds, gts) in (1usize..40).prop_flat_map(|n| (counts(n, 3), gt_counts(n, 3))), max_count in 0u64..10) {
        let pp = postprocess_all(&preds).unwrap();
        let profile = count_error_profile(&pp, &gts, max_count).unwrap();
        let n = (pp.len() * 3) as f64;
        let mse: f64 = pp.iter().zip(&gts).flat_map(|(p, g)| p.0.iter().zip(&g.0).map(|(a, b)| (a - b).powi(2))).sum::<f64>() / n;
        prop_assert!((profile.overall_mse() - mse).abs() < 1e-9);
    }

    #[test]
    fn bias_shares_sum_to_one_hundred((preds, gts) in (1usize..40).prop_flat_map(|n| (counts(n, 3), gt_counts(n, 3)))) {
        prop_assume!(gts.iter().any(|g| g.0.iter().any(|&v| v > 0.0)));
        let b = count_bias_stats(&postprocess_all(&preds).unwrap(), &gts).unwrap();
        prop_assert!((b.undercount + b.overcount + b.equal - 100.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_is_order_free_and_bounded(members in (1usize..6, 1usize..5).prop_flat_map(|(n, m)| prop::collection::vec(counts(n, 2), m)), seed in any::<u64>()) {
        let mean = ensemble(&members).unwrap();
        let mut shuffled = members.clone();
        let mut rng = stream(seed, "shuffle");
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let other = ensemble(&shuffled).unwrap();
        for (i, img) in mean.iter().enumerate() {
            for k in 0..2 {
                let vals: Vec<f64> = members.iter().map(|m| m[i].get(k)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(img.get(k) >= lo - 1e-12 && img.get(k) <= hi + 1e-12);
                prop_assert!((img.get(k) - other[i].get(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_a_non_overlapping_subset(dets in prop::collection::vec(detection(), 0..15), overlap in 0.0..=1.0f64) {
        let kept = nms(&dets, overlap);
        let mut sorted = kept.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), kept.len());
        prop_assert!(kept.iter().all(|&i| i < dets.len()));
        for (n, &i) in kept.iter().enumerate() {
            for &j in &kept[..n] {
                prop_assert!(iou(&dets[i].bbox, &dets[j].bbox) <= overlap);
            }
        }
        // every dropped box is suppressed by a kept box that outranks it
        for i in (0..dets.len()).filter(|i| !kept.contains(i)) {
            let suppressed = kept.iter().any(|&k| {
                let outranks = dets[k].score > dets[i].score || (dets[k].score == dets[i].score && k < i);
                outranks && iou(&dets[k].bbox, &dets[i].bbox) > overlap
            });
            prop_assert!(suppressed);
        }
    }

    #[test]
    fn detect_count_falls_as_the_score_threshold_rises(dets in prop::collection::vec(detection(), 0..15), overlap in 0.0..=1.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let categories = category_table(2);
        let set = DetectionSet { image_id: 0, detections: dets };
        let (lo, hi) = (a.min(b), a.max(b));
        let at_lo = detect_count(&set, &ThresholdConfig::uniform(&categories, lo, overlap), &categories);
        let at_hi = detect_count(&set, &ThresholdConfig::uniform(&categories, hi, overlap), &categories);
        for k in 0..2 {
            prop_assert!(at_hi.get(k) <= at_lo.get(k));
        }
    }

    #[test]
    fn matching_is_one_to_one_and_consistent(dets in prop::collection::vec(detection(), 0..10), gts in prop::collection::vec(bbox(), 0..10)) {
        let m = match_detections(&dets, &gts);
        let mut ds: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut gs: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        ds.sort_unstable();
        ds.dedup();
        gs.sort_unstable();
        gs.dedup();
        prop_assert_eq!(ds.len(), m.pairs.len());
        prop_assert_eq!(gs.len(), m.pairs.len());
        for &(d, g) in &m.pairs {
            prop_assert!(iou(&dets[d].bbox, &gts[g]) >= MATCH_IOU);
        }
        prop_assert_eq!(m.pairs.len() + m.false_positives.len(), dets.len());
        prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), gts.len());
        let f = f_measure(&m);
        prop_assert!((0.0..=1.0).contains(&f.f));
    }

    #[test]
    fn guided_selection_recalls_at_least_any_smaller_threshold(
        dets in prop::collection::vec(detection(), 0..12),
        gts in prop::collection::vec(bbox(), 0..8),
        c in 1usize..10,
    ) {
        let categories = category_table(1);
        let dets: Vec<Detection> = dets.into_iter().map(|d| Detection { category_id: 1, ..d }).collect();
        let set = DetectionSet { image_id: 0, detections: dets.clone() };
        let guided = count_guided_select(&set, &ImageCounts(vec![c as f64]), &BTreeMap::new(), &categories).unwrap();
        let guided_tp = match_detections(&guided.detections, &gts).pairs.len();
        for t in (0..=20).map(|s| f64::from(s) / 20.0) {
            let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= t).copied().collect();
            if kept.len() <= c {
                prop_assert!(match_detections(&kept, &gts).pairs.len() <= guided_tp);
            }
        }
    }

    #[test]
    fn featurizer_reads_only_its_own_cell(
        (w, h, pixels) in (4u32..40, 4u32..40).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u8..=8, (w * h) as usize))),
        rows in 1usize..4,
        cols in 1usize..4,
        pick in any::<prop::sample::Index>(),
    ) {
        let raster = Raster::from_pixels(w, h, pixels).unwrap();
        let full = featurize(&raster, rows, cols).unwrap();
        let cell = pick.index(rows * cols);
        let p = make_partition(w, h, rows, cols).unwrap();
        let (x0, x1) = p.col_span(cell % cols);
        let (y0, y1) = p.row_span(cell / cols);
        let mut isolated = Raster::blank(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                isolated.set(x, y, raster.get(x, y));
            }
        }
        let alone = featurize(&isolated, rows, cols).unwrap();
        prop_assert_eq!(alone.cell(cell), full.cell(cell));
    }

    #[test]
    fn super_category_answer_is_member_sum(values in prop::collection::vec(0u32..20, 5)) {
        let categories = category_table(5);
        let table = synthetic_embeddings(&categories, 32, 1).unwrap();
        let counts = ImageCounts(values.iter().map(|&v| f64::from(v)).collect());
        for sup in categories.supercategories().into_iter().filter(|s| !s.is_empty()) {
            let target = resolve_category(sup, &table, &categories).unwrap();
            let members: u32 = categories.members(sup).iter().map(|&m| values[m]).sum();
            prop_assert_eq!(answer_count(&target, &counts), u64::from(members));
        }
    }

    #[test]
    fn resolution_ignores_embedding_scale(seed in 0u64..1000, scale in 1e-3..1e3f64) {
        let categories = category_table(8);
        let table = synthetic_embeddings(&categories, 16, seed).unwrap();
        let mut scaled = EmbeddingTable::new(table.dim());
        for (w, v) in table.iter() {
            scaled.insert(w, v.iter().map(|x| x * scale).collect()).unwrap();
        }
        let mut rng = stream(seed, "queries");
        let words: Vec<String> = table.iter().map(|(w, _)| w.to_string()).collect();
        for _ in 0..10 {
            let query = format!("{} {}", words[rng.gen_range(0..words.len())], words[rng.gen_range(0..words.len())]);
            let a = resolve_category(&query, &table, &categories).unwrap();
            let b = resolve_category(&query, &scaled, &categories).unwrap();
            prop_assert_eq!((a.kind, a.name, a.indices), (b.kind, b.name, b.indices));
        }
    }

    #[test]
    fn gt_class_probabilities_are_normalized(logits in prop::collection::vec(-20.0..20.0f64, 12), shift in -50.0..50.0f64) {
        let m = ndarray::Array2::from_shape_vec((1, 12), logits).unwrap();
        let p = grouped_softmax(&m, 4);
        for g in 0..3 {
            let sum: f64 = (0..4).map(|j| p[[0, g * 4 + j]]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let mut shifted = m.clone();
        for j in 4..8 {
            shifted[[0, j]] += shift;
        }
        let q = grouped_softmax(&shifted, 4);
        for j in 0..12 {
            prop_assert!((p[[0, j]] - q[[0, j]]).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn countqa_filter_is_a_subset_and_idempotent(seed in 0u64..500, flips in prop::collection::vec(any::<bool>(), 40)) {
        let cfg = SynthConfig { scene_count: 20, image_size: 60, seed, ..SynthConfig::default() };
        let categories = category_table(cfg.num_categories);
        let scenes: Vec<SceneAnnotation> = generate_synthetic(&cfg).unwrap().into_iter().map(|(s, _)| s).collect();
        let table = synthetic_embeddings(&categories, 32, seed).unwrap();
        let mut questions = synthetic_questions(&scenes, &categories, seed);
        for (q, &flip) in questions.iter_mut().zip(&flips) {
            if flip {
                q.answer += 1;
            }
        }
        let kept = build_countqa(&questions, &scenes, &table, &categories);
        prop_assert!(kept.iter().all(|q| questions.contains(q)));
        prop_assert_eq!(build_countqa(&kept, &scenes, &table, &categories), kept.clone());
        let flipped = questions.iter().zip(&flips).filter(|(_, &f)| f).count();
        prop_assert_eq!(kept.len(), questions.len() - flipped);
    }

    #[test]
    fn aso_sub_is_cell_permutation_equivariant(seed in any::<u64>(), values in prop::collection::vec(-1.0..1.0f64, 9 * 6)) {
        let arch = ArchConfig { hidden: vec![8], ..ArchConfig::default() };
        let model = CountModel::new(ModelKind::AsoSub, 3, 3, 6, 2, arch, seed).unwrap();
        let grid = FeatureGrid::new(3, 3, 6, values).unwrap();
        let mut rng = stream(seed, "perm");
        let mut perm: Vec<usize> = (0..9).collect();
        for i in (1..9).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut permuted = FeatureGrid::zeros(3, 3, 6);
        for (to, &from) in perm.iter().enumerate() {
            permuted.cell_mut(to).copy_from_slice(grid.cell(from));
        }
        let a = model.predict_cells(&grid).unwrap();
        let b = model.predict_cells(&permuted).unwrap();
        for (to, &from) in perm.iter().enumerate() {
            prop_assert_eq!(b.cell(to), a.cell(from));
        }
    }

    #[test]
    fn seq_sub_context_reaches_every_cell(seed in any::<u64>(), values in prop::collection::vec(-1.0..1.0f64, 9 * 6), cell in 0usize..9) {
        let arch = ArchConfig { encoder_dim: 8, lstm_hidden: 4, head_hidden: 8, ..ArchConfig::default() };
        let model = CountModel::new(ModelKind::SeqSub, 3, 3, 6, 2, arch, seed).unwrap();
        let grid = FeatureGrid::new(3, 3, 6, values).unwrap();
        let mut bumped = grid.clone();
        bumped.cell_mut(cell).iter_mut().for_each(|v| *v += 0.5);
        let a = model.predict_cells(&grid).unwrap();
        let b = model.predict_cells(&bumped).unwrap();
        for i in 0..9 {
            prop_assert!(a.cell(i) != b.cell(i), "cell {} untouched by a change in cell {}", i, cell);
        }
    }
}
