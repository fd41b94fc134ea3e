use super::*;
use crate::autograd::gradcheck::check_params;
use crate::geo::BBox;
use crate::sampling::{ray_direction, sample_boundary};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_points: 4,
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_hidden: 12,
        stem_hidden: 6,
        token_stride: 4,
        query_stride: 2,
        residual_scale: 0.25,
        seed: 3,
    }
}

fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::new(vec![
        GeoPoint::new(x0, y0),
        GeoPoint::new(x1, y0),
        GeoPoint::new(x1, y1),
        GeoPoint::new(x0, y1),
    ])
    .unwrap()
}

/// Patch with `truth` painted in a flat color, plus refs pushed outward.
fn example(size: usize, truth: Polygon, n: usize) -> Example {
    let mut patch = RasterPatch::filled(size, size, [30, 60, 30], BBox::unit());
    for r in 0..size {
        for c in 0..size {
            let p = GeoPoint::new((c as f64 + 0.5) / size as f64, 1.0 - (r as f64 + 0.5) / size as f64);
            if crate::geo::point_in_polygon(p, &truth) {
                patch.set_pixel(c, r, [200, 180, 90]);
            }
        }
    }
    let core = GeoPoint::new(0.5, 0.5);
    let target = sample_boundary(&truth, core, n).unwrap().points;
    let refs = target.iter().map(|p| core.lerp(*p, 1.2)).collect();
    Example {
        input: ModelInput { patch, core, category: Category::new(14).unwrap(), refs },
        target,
        truth,
    }
}

#[test]
fn zero_head_weights_give_center_and_no_offset() {
    let mut m = Aoitr::new(&tiny_config()).unwrap();
    for lin in [*m.network.init_head(), *m.network.residual_head()] {
        m.params.get_mut(lin.weight()).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let ex = example(16, square(0.3, 0.3, 0.7, 0.7), 4);
    let out = m.predict(&ex.input).unwrap().prediction;
    assert!(out.p_init.data().iter().all(|v| *v == 0.5));
    assert!(out.p_res.data().iter().all(|v| *v == 0.0));
}

#[test]
fn p_hat_is_init_plus_residual_and_deterministic() {
    let m = Aoitr::new(&tiny_config()).unwrap();
    let ex = example(16, square(0.2, 0.3, 0.7, 0.8), 4);
    let a = m.predict(&ex.input).unwrap();
    let b = m.predict(&ex.input).unwrap();
    assert_eq!(a, b);
    let p = &a.prediction;
    assert_eq!(p.p_hat.shape(), (4, 2));
    for i in 0..8 {
        assert_eq!(p.p_hat.data()[i], p.p_init.data()[i] + p.p_res.data()[i]);
        assert!(p.p_res.data()[i].abs() <= 0.25);
    }
    assert_eq!(a.o_cat.len(), 8);
}

#[test]
fn refs_count_must_match_n() {
    let m = Aoitr::new(&tiny_config()).unwrap();
    let mut ex = example(16, square(0.2, 0.3, 0.7, 0.8), 4);
    ex.input.refs.pop();
    assert!(matches!(m.predict(&ex.input), Err(Error::Shape(_))));
}

#[test]
fn config_validation() {
    let mut c = tiny_config();
    c.n_points = 2;
    assert!(Aoitr::new(&c).is_err());
    let mut c = tiny_config();
    c.heads = 3;
    assert!(Aoitr::new(&c).is_err());
}

#[test]
fn empty_stacks_are_identities() {
    let cfg = ModelConfig { encoder_layers: 0, decoder_layers: 0, ..tiny_config() };
    let m = Aoitr::new(&cfg).unwrap();
    let mut g = Graph::new();
    let tokens = Tensor::new(3, 8, (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
    let pe = Tensor::filled(3, 8, 0.5);
    let (tv, pv) = (g.constant(tokens.clone()), g.constant(pe));
    let mem = m.network.encode(&mut g, &m.params, tv, pv).unwrap();
    for (a, b) in g.value(mem).data().iter().zip(tokens.data()) {
        assert_eq!(*a, b + 0.5);
    }

    let r_l = g.constant(Tensor::filled(5, 8, 1.0));
    let p_l = g.constant(Tensor::filled(1, 8, 2.0));
    let p_c = g.constant(Tensor::filled(1, 8, -1.0));
    let pos = g.constant(Tensor::zeros(6, 8));
    let (o_ref, o_cat) = m.network.decode(&mut g, &m.params, Some(p_l), Some(p_c), r_l, pos, mem).unwrap();
    assert_eq!(g.shape(o_ref), (5, 8));
    assert!(g.value(o_ref).data().iter().all(|v| *v == 3.0));
    assert!(g.value(o_cat).data().iter().all(|v| *v == -1.0));
}

#[test]
fn content_queries_follow_refs() {
    let m = Aoitr::new(&tiny_config()).unwrap();
    let mut ex = example(16, square(0.2, 0.2, 0.8, 0.7), 4);
    ex.input.refs = vec![GeoPoint::new(0.25, 0.75); 4];
    let q = m.content_queries(&ex.input).unwrap();
    assert_eq!((q.p_l.shape(), q.p_c.shape(), q.r_l.shape()), ((1, 8), (1, 8), (4, 8)));
    for k in 1..4 {
        assert_eq!(q.r_l.row(k), q.r_l.row(0));
    }

    ex.input.refs = vec![
        GeoPoint::new(0.9, 0.5),
        GeoPoint::new(0.5, 0.8),
        GeoPoint::new(0.1, 0.45),
        GeoPoint::new(0.52, 0.05),
    ];
    let a = m.content_queries(&ex.input).unwrap();
    ex.input.refs.swap(0, 2);
    let b = m.content_queries(&ex.input).unwrap();
    assert_eq!(a.r_l.row(0), b.r_l.row(2));
    assert_eq!(a.r_l.row(2), b.r_l.row(0));
    assert_eq!(a.r_l.row(1), b.r_l.row(1));
    assert_eq!(a.p_l, b.p_l);

    // category row is the embedding table row
    let table = m.params.get(m.network.category_embedding);
    assert_eq!(a.p_c.data(), table.row(14));
}

#[test]
fn query_sampling_gradient_reaches_every_sampled_point() {
    let m = Aoitr::new(&tiny_config()).unwrap();
    let (h, w, d) = (5, 6, 8);
    let mut g = Graph::new();
    let fmap = g.variable(Tensor::zeros(h * w, d));
    let core = GeoPoint::new(0.5, 0.5);
    let refs = [GeoPoint::new(0.05, 0.95), GeoPoint::new(0.95, 0.05), GeoPoint::new(0.95, 0.95), GeoPoint::new(0.05, 0.05)];
    let (p_l, _, r_l) = m.network.content_queries(&mut g, &m.params, fmap, (h, w), core, Category::new(9).unwrap(), &refs).unwrap();
    let both = g.concat_rows(&[p_l, r_l]).unwrap();
    let loss = g.sum_all(both);
    g.backward(loss).unwrap();
    let grad = g.grad(fmap).unwrap();
    // each sampled location contributes its bilinear weights (which sum to one) to every channel
    let total: f64 = (0..h * w).map(|c| grad.get(c, 0)).sum();
    assert!((total - 5.0).abs() < 1e-12);
    // the four corner refs land on (or beside) the four corner cells
    for cell in [0, w - 1, (h - 1) * w, h * w - 1] {
        assert!(grad.get(cell, 0) > 0.0, "cell {cell}");
    }
    // the core at the center of a 5x6 grid touches row 2, columns 2 and 3
    assert!(grad.get(2 * w + 2, 0) > 0.0 && grad.get(2 * w + 3, 0) > 0.0);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut m = Aoitr::new(&tiny_config()).unwrap();
    let ex = example(16, square(0.25, 0.3, 0.75, 0.8), 4);
    let network = m.network.clone();
    let target = target_tensor(&ex.target);
    // squared error keeps the loss smooth at every probe
    let worst = check_params(&mut m.params, 240, |s, g| {
        let v = network.forward(g, s, &ex.input, ForwardOptions::default()).unwrap();
        let t = g.constant(target.clone());
        let d = g.sub(v.p_hat, t).unwrap();
        let sq = g.mul(d, d).unwrap();
        g.sum_all(sq)
    });
    assert!(worst < 1e-4, "worst {worst}");
}

#[test]
fn l1_loss_sum_convention() {
    let p = vec![GeoPoint::new(0.2, 0.3), GeoPoint::new(0.5, 0.5)];
    assert_eq!(l1_loss(&p, &p).unwrap(), 0.0);
    let q = vec![GeoPoint::new(0.3, 0.1), GeoPoint::new(0.5, 0.5)];
    assert!((l1_loss(&p, &q).unwrap() - 0.3).abs() < 1e-12);
    assert!(l1_loss(&p, &q[..1]).is_err());
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let mut m = Aoitr::new(&tiny_config()).unwrap();
    let before = m.params.clone();
    let ex = example(16, square(0.25, 0.3, 0.75, 0.8), 4);
    let opts = TrainOptions { epochs: 2, batch_size: 1, learning_rate: 0.0, seed: 1, grad_clip: None };
    train(&mut m, std::slice::from_ref(&ex), None, &opts, |_| {}).unwrap();
    assert_eq!(m.params, before);
}

#[test]
fn small_lr_loss_is_non_increasing_on_fixed_batch() {
    let mut m = Aoitr::new(&tiny_config()).unwrap();
    let batch: Vec<Example> = [
        square(0.25, 0.3, 0.75, 0.8),
        square(0.1, 0.2, 0.6, 0.7),
        square(0.3, 0.35, 0.9, 0.95),
    ]
    .into_iter()
    .map(|p| example(16, p, 4))
    .collect();
    let refs: Vec<&Example> = batch.iter().collect();
    let mut adam = Adam::new(&m.params, 1e-4);
    let mut losses = Vec::new();
    for _ in 0..11 {
        losses.push(train::train_step(&mut m, &mut adam, &refs, None).unwrap());
    }
    let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(increases <= 1, "{losses:?}");
    assert!(losses[10] < losses[0]);
}

#[test]
fn nan_loss_aborts_training() {
    let mut m = Aoitr::new(&tiny_config()).unwrap();
    let id = m.network.init_head().bias();
    m.params.get_mut(id).data_mut()[0] = f64::NAN;
    let ex = example(16, square(0.25, 0.3, 0.75, 0.8), 4);
    let err = train(&mut m, std::slice::from_ref(&ex), None, &TrainOptions::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1, .. }));
}

#[test]
fn checkpoint_round_trip() {
    let m = Aoitr::new(&tiny_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    let ex = example(16, square(0.25, 0.3, 0.75, 0.8), 4);
    assert_eq!(back.predict(&ex.input).unwrap(), m.predict(&ex.input).unwrap());
}

#[test]
fn metrics_csv_header() {
    let log = MetricsLog { rows: vec![EpochMetrics { epoch: 1, loss: 0.5, miou: 0.25, high_iou: 0.0 }] };
    assert_eq!(log.to_csv(), "epoch,loss,mIoU,highIoU\n1,0.5,0.25,0\n");
}

const RECTS: [(f64, f64, f64, f64); 4] =
    [(0.1, 0.2, 0.6, 0.9), (0.3, 0.3, 0.7, 0.7), (0.2, 0.1, 0.9, 0.6), (0.4, 0.45, 0.6, 0.8)];

fn rect_suite() -> Vec<Example> {
    RECTS
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut ex = example(8, square(r.0, r.1, r.2, r.3), 4);
            ex.input.category = Category::new(if i % 2 == 0 { 14 } else { 8 }).unwrap();
            ex
        })
        .collect()
}

#[test]
fn evaluate_perfect_predictor() {
    let suite = rect_suite();
    let r = evaluate(&suite, |ex| Ok(ex.truth.vertices().to_vec())).unwrap();
    assert!((r.summary.miou - 1.0).abs() < 1e-12);
    assert_eq!(r.summary.high_iou_rate, 1.0);
}

#[test]
fn evaluate_constant_predictor_matches_rectangle_oracle() {
    let suite = rect_suite();
    let fixed = [0.25, 0.25, 0.75, 0.75];
    let r = evaluate(&suite, |_| Ok(square(fixed[0], fixed[1], fixed[2], fixed[3]).vertices().to_vec())).unwrap();
    let oracle: Vec<f64> = RECTS
        .iter()
        .map(|&(x0, y0, x1, y1)| {
            let iw = (x1.min(fixed[2]) - x0.max(fixed[0])).max(0.0);
            let ih = (y1.min(fixed[3]) - y0.max(fixed[1])).max(0.0);
            let inter = iw * ih;
            inter / ((x1 - x0) * (y1 - y0) + 0.25 - inter)
        })
        .collect();
    for (a, b) in r.ious.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    let mean = oracle.iter().sum::<f64>() / 4.0;
    assert!((r.summary.miou - mean).abs() < 1e-12);
    let weighted: f64 =
        r.per_category.values().map(|s| s.miou * s.count as f64).sum::<f64>() / r.summary.count as f64;
    assert!((weighted - r.summary.miou).abs() < 1e-12);
    assert_eq!(r.per_category.len(), 2);
}

#[test]
fn degenerate_prediction_scores_zero() {
    let suite = rect_suite();
    let r = evaluate(&suite, |_| Ok(vec![GeoPoint::new(0.5, 0.5); 4])).unwrap();
    assert_eq!(r.summary.miou, 0.0);
}

#[test]
fn modality_drops_change_the_right_inputs() {
    use rand::SeedableRng;
    let ex = example(16, square(0.25, 0.3, 0.75, 0.8), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (inp, opts) = Modality::RoadRefs.apply(&ex.input, &mut rng);
    assert_eq!(opts, ForwardOptions::default());
    for (k, p) in inp.refs.iter().enumerate() {
        let expect = GeoPoint::new(0.5, 0.5).add(ray_direction(k, 4).scale(0.5));
        assert!(p.dist(expect) < 1e-12);
    }
    let (inp, _) = Modality::Imagery.apply(&ex.input, &mut rng);
    assert_ne!(inp.patch, ex.input.patch);
    assert_eq!(inp.refs, ex.input.refs);
    let (inp, opts) = Modality::CoreLocation.apply(&ex.input, &mut rng);
    assert!(opts.drop_location && !opts.drop_category);
    assert_eq!(inp, ex.input);
}
