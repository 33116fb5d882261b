//! Random grounding/postdiction instances evaluated by the library and by
//! explicit-loop references.

use mdst::autograd::Graph;
use mdst::config::{Ablation, StateWriteKeys};
use mdst::params::ParamStore;
use mdst::pds::{fuse_qa_pair, update_language_states, PdsParams};
use mdst::qgds::{ground_question, QgdsParams};
use mdst::state_core::{project_objects, DialogueState, LanguageStates, ObjectProjection, VisionStates};
use mdst::tensor::Matrix;
use mdst::text_encoder::ContextualReps;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Replaces every parameter with random values so layer-norm gains and
/// biases are exercised too.
pub fn randomise(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x = rng.random_range(-0.8..0.8);
        }
    }
}

/// A prefix mask with at least one real token.
pub fn prefix_mask(rng: &mut ChaCha8Rng, l: usize) -> Vec<bool> {
    let real = rng.random_range(1..=l);
    (0..l).map(|i| i < real).collect()
}

pub struct Instance {
    pub store: ParamStore,
    pub qgds: QgdsParams,
    pub pds: PdsParams,
    pub q: Rows,
    pub q_mask: Vec<bool>,
    pub a: Rows,
    pub a_mask: Vec<bool>,
    pub s: Rows,
    pub o: Rows,
    pub d: usize,
}

/// `l ∈ [1,8]` question tokens, `N ∈ [1,6]` objects plus NULL and ALL,
/// `d ∈ {4,8,16}`, random parameters, states and masks.
pub fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let d = [4, 8, 16][r.random_range(0..3)];
    let k = r.random_range(1..=6) + 2;
    let l = r.random_range(1..=8);
    let la = r.random_range(1..=6);
    let mut store = ParamStore::new();
    let qgds = QgdsParams::new(&mut store, &mut r, d, k, 0.1);
    let pds = PdsParams::new(&mut store, &mut r, d, 0.1);
    randomise(&mut store, &mut r);
    let q_mask = prefix_mask(&mut r, l);
    let a_mask = prefix_mask(&mut r, la);
    Instance {
        q: to_rows(&random_matrix(&mut r, l, d, 1.5)),
        a: to_rows(&random_matrix(&mut r, la, d, 1.5)),
        s: to_rows(&random_matrix(&mut r, k, d, 2.0)),
        o: to_rows(&random_matrix(&mut r, k, d, 1.5)),
        store,
        qgds,
        pds,
        q_mask,
        a_mask,
        d,
    }
}

fn matrix(rows: &Rows) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// Every output of one grounding, fusion and write step.
pub struct Outputs {
    pub pi_l: Matrix,
    pub pi_v: Matrix,
    pub phi: f64,
    pub q: Matrix,
    pub dq_l: Matrix,
    pub dq_v: Matrix,
    pub fused: Matrix,
    pub alpha: Matrix,
    pub h: Matrix,
    pub beta: Matrix,
    pub s_before: Matrix,
    pub s_after: Matrix,
    pub round_before: usize,
    pub round_after: usize,
}

/// Runs the library on `inst`.
pub fn run(inst: &Instance, switching: bool, keys: StateWriteKeys) -> Outputs {
    let ablation = Ablation {
        use_switching: switching,
        ..Ablation::FULL
    };
    let mut g = Graph::new(&inst.store);
    let k = inst.o.len();
    let o = g.constant(matrix(&inst.o));
    let s = g.constant(matrix(&inst.s));
    let st = DialogueState {
        vision: VisionStates {
            rows: o,
            n_objects: k - 2,
            null_index: Some(k - 2),
            all_index: Some(k - 1),
            d: inst.d,
        },
        language: LanguageStates { rows: s, round: 3 },
    };
    let q = ContextualReps {
        reps: g.constant(matrix(&inst.q)),
        mask: inst.q_mask.clone(),
    };
    let a = ContextualReps {
        reps: g.constant(matrix(&inst.a)),
        mask: inst.a_mask.clone(),
    };
    let gq = ground_question(&mut g, &inst.qgds, &q, &st, ablation).unwrap();
    let fusion = fuse_qa_pair(&mut g, &inst.pds, &q, gq.dq_l, &a).unwrap();
    let (after, up) = update_language_states(&mut g, &inst.pds, fusion.h, &inst.q_mask, gq.dq_l, &st, keys).unwrap();
    let v = |x| g.value(x).clone();
    Outputs {
        pi_l: v(gq.pi_l),
        pi_v: v(gq.pi_v),
        phi: g.value(gq.phi).get(0, 0),
        q: v(gq.q),
        dq_l: v(gq.dq_l),
        dq_v: v(gq.dq_v),
        fused: v(gq.fused),
        alpha: v(fusion.alpha),
        h: v(fusion.h),
        beta: v(up.beta),
        s_before: v(s),
        s_after: v(after.language.rows),
        round_before: st.language.round,
        round_after: after.language.round,
    }
}

pub fn zero_rows(x: &Rows, mask: &[bool]) -> Rows {
    x.iter()
        .zip(mask)
        .map(|(r, &m)| if m { r.clone() } else { vec![0.0; r.len()] })
        .collect()
}

/// `softmax(MLP_q(x)·MLP_k(keys)ᵀ/√d)`, masked keys excluded.
pub fn ref_alignment(store: &ParamStore, qn: &str, kn: &str, x: &Rows, keys: &Rows, key_mask: Option<&[bool]>) -> Rows {
    let d = x[0].len() as f64;
    let mq = ref_mlp(store, qn, x);
    let mk = ref_mlp(store, kn, keys);
    let mut logits = vec![vec![0.0; keys.len()]; x.len()];
    for i in 0..x.len() {
        for j in 0..keys.len() {
            let mut dot = 0.0;
            for t in 0..mq[i].len() {
                dot += mq[i][t] * mk[j][t];
            }
            logits[i][j] = match key_mask {
                Some(m) if !m[j] => f64::NEG_INFINITY,
                _ => dot / d.sqrt(),
            };
        }
    }
    ref_softmax(&logits)
}

pub struct Reference {
    pub pi_l: Rows,
    pub pi_v: Rows,
    pub phi: f64,
    pub dq_l: Rows,
    pub dq_v: Rows,
    pub fused: Rows,
    pub alpha: Rows,
    pub h: Rows,
    pub beta: Rows,
    pub s_after: Rows,
}

pub fn reference(inst: &Instance, switching: bool, keys: StateWriteKeys) -> Reference {
    let st = &inst.store;
    let (q, s, o) = (&inst.q, &inst.s, &inst.o);
    let k = s.len();
    let pi_l = ref_alignment(st, "qgds/entity_query", "qgds/entity_key", q, s, None);
    let pi_v = ref_alignment(st, "qgds/object_query", "qgds/object_key", q, o, None);

    // Switch: mean over real tokens of the unscaled bilinear logits, then w.
    let mq = ref_mlp(st, "qgds/switch_query", q);
    let mk = ref_mlp(st, "qgds/switch_key", s);
    let real: Vec<usize> = (0..q.len()).filter(|&i| inst.q_mask[i]).collect();
    let w = st.by_name("qgds/w").unwrap().row(0).to_vec();
    let mut z = 0.0;
    for j in 0..k {
        let mut mean = 0.0;
        for &i in &real {
            let mut dot = 0.0;
            for t in 0..mq[i].len() {
                dot += mq[i][t] * mk[j][t];
            }
            mean += dot;
        }
        z += mean / real.len() as f64 * w[j];
    }
    let phi = ref_sigmoid(z / (k as f64).sqrt());

    let (mix_l, mix_v) = if switching {
        (
            ref_add(&pi_l, &ref_scale(&pi_v, phi)),
            ref_add(&pi_v, &ref_scale(&pi_l, 1.0 - phi)),
        )
    } else {
        (pi_l.clone(), pi_v.clone())
    };
    let dq_l = ref_matmul(&zero_rows(&mix_l, &inst.q_mask), s);
    let dq_v = ref_matmul(&zero_rows(&mix_v, &inst.q_mask), o);
    let fused = ref_add(&ref_add(q, &dq_l), &dq_v);

    let query = ref_add(q, &dq_l);
    let alpha = ref_alignment(st, "pds/answer_query", "pds/answer_key", &query, &inst.a, Some(&inst.a_mask));
    let h = zero_rows(&ref_add(q, &ref_matmul(&alpha, &inst.a)), &inst.q_mask);
    let key_rows = match keys {
        StateWriteKeys::Language => s.clone(),
        StateWriteKeys::ObjectAnchored => ref_add(s, o),
    };
    let beta = zero_rows(
        &ref_alignment(st, "pds/write_query", "pds/write_key", &ref_add(&h, &dq_l), &key_rows, None),
        &inst.q_mask,
    );
    let s_after = ref_add(s, &ref_matmul(&ref_transpose(&beta), &h));
    Reference {
        pi_l,
        pi_v,
        phi,
        dq_l,
        dq_v,
        fused,
        alpha,
        h,
        beta,
        s_after,
    }
}

/// Largest deviation between library and reference grounding outputs.
pub fn grounding_error(inst: &Instance, switching: bool) -> f64 {
    let out = run(inst, switching, StateWriteKeys::ObjectAnchored);
    let r = reference(inst, switching, StateWriteKeys::ObjectAnchored);
    [
        max_diff(&r.pi_l, &out.pi_l),
        max_diff(&r.pi_v, &out.pi_v),
        (r.phi - out.phi).abs(),
        max_diff(&r.dq_l, &out.dq_l),
        max_diff(&r.dq_v, &out.dq_v),
        max_diff(&r.fused, &out.fused),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Largest deviation between library and reference fusion and write outputs.
pub fn postdiction_error(inst: &Instance, keys: StateWriteKeys) -> f64 {
    let out = run(inst, true, keys);
    let r = reference(inst, true, keys);
    [
        max_diff(&r.alpha, &out.alpha),
        max_diff(&r.h, &out.h),
        max_diff(&r.beta, &out.beta),
        max_diff(&r.s_after, &out.s_after),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Largest deviation of the object projection (with and without NULL/ALL).
pub fn projection_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = [4, 8, 16][r.random_range(0..3)];
    let n = r.random_range(1..=6);
    let raw_dim = r.random_range(1..=12);
    let mut store = ParamStore::new();
    let proj = ObjectProjection::new(&mut store, &mut r, raw_dim, d);
    randomise(&mut store, &mut r);
    let raw = random_matrix(&mut r, n, raw_dim, 2.0);
    let w = to_rows(store.by_name("state_core/projection/W").unwrap());
    let b = store.by_name("state_core/projection/b").unwrap().row(0).to_vec();
    let gain = store.by_name("state_core/projection/norm/gain").unwrap().row(0).to_vec();
    let bias = store.by_name("state_core/projection/norm/bias").unwrap().row(0).to_vec();
    let mut h = ref_matmul(&to_rows(&raw), &ref_transpose(&w));
    for row in &mut h {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x + b[j]).max(0.0);
        }
    }
    let objects = ref_layer_norm(&h, &gain, &bias, mdst::autograd::LAYER_NORM_EPS);
    let mut with_pseudo = objects.clone();
    with_pseudo.push(vec![0.0; d]);
    with_pseudo.push((0..d).map(|j| objects.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect());

    let mut g = Graph::new(&store);
    let full = project_objects(&mut g, &proj, &raw, true).unwrap();
    assert_eq!((full.null_index, full.all_index), (Some(n), Some(n + 1)));
    let plain = project_objects(&mut g, &proj, &raw, false).unwrap();
    max_diff(&with_pseudo, g.value(full.rows)).max(max_diff(&objects, g.value(plain.rows)))
}

/// Largest `|row sum − 1|` over the real rows of a row-stochastic matrix.
pub fn row_sum_error(m: &Matrix, mask: &[bool]) -> f64 {
    (0..m.rows())
        .filter(|&i| mask[i])
        .map(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Normalisation and composition invariants of one instance; `Err` names the first violation.
pub fn shape_contract(inst: &Instance) -> Result<(), String> {
    const SUM_TOL: f64 = 1e-6;
    for switching in [true, false] {
        let out = run(inst, switching, StateWriteKeys::ObjectAnchored);
        let all = vec![true; out.pi_l.rows()];
        for (name, m, mask) in [
            ("pi_l", &out.pi_l, &all),
            ("pi_v", &out.pi_v, &all),
            ("alpha", &out.alpha, &all),
            ("beta", &out.beta, &inst.q_mask),
        ] {
            let e = row_sum_error(m, mask);
            if e.is_nan() || e > SUM_TOL {
                return Err(format!("{name} row sum off by {e:e}"));
            }
        }
        if !(out.phi > 0.0 && out.phi < 1.0) {
            return Err(format!("phi {} outside (0,1)", out.phi));
        }
        for i in 0..out.q.rows() {
            for j in 0..out.q.cols() {
                let expect = (out.q.get(i, j) + out.dq_l.get(i, j)) + out.dq_v.get(i, j);
                if out.fused.get(i, j).to_bits() != expect.to_bits() {
                    return Err(format!("fused[{i},{j}] differs from q+dq_l+dq_v"));
                }
            }
        }
    }
    Ok(())
}
