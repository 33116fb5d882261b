//! Dialogue state `⟨O, S⟩` and the shared non-linear block.
//!
//! Vision states `O` are the projected region features followed by the NULL
//! (zero) and ALL (mean of projected objects) pseudo-objects. They are
//! computed once per dialog and only ever read afterwards. Language states
//! `S` have one row per vision row, start at zero and change only through
//! additive writes. Row `i` of `S` always describes object row `i` of `O`;
//! nothing in the crate reorders rows.

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{MdstError, Result};
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::transformer::LayerNorm;

/// `LayerNorm(Dropout(GELU(W x)))`, applied row-wise.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    /// `out × in`.
    pub w: ParamId,
    pub norm: LayerNorm,
    pub dropout: f64,
}

impl MlpBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize, dropout: f64) -> Self {
        Self {
            w: store.add(format!("{name}/W"), uniform_fan_in(output, input, input, rng)),
            norm: LayerNorm::new(store, &format!("{name}/norm"), output),
            dropout,
        }
    }

    /// Applies the block; dropout is active only on training graphs.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, width) = g.shape(x);
        let expected = g.store().get(self.w).cols();
        if width != expected {
            return Err(MdstError::Shape(format!(
                "mlp block expects width {expected}, got {width}"
            )));
        }
        let w = g.param(self.w);
        let h = g.matmul_nt(x, w)?;
        let h = g.gelu(h);
        let h = g.dropout(h, self.dropout)?;
        self.norm.forward(g, h)
    }
}

/// Projection of raw region features into vision states.
#[derive(Clone, Debug)]
pub struct ObjectProjection {
    /// `d × D_raw`.
    pub w: ParamId,
    pub b: ParamId,
    pub norm: LayerNorm,
}

impl ObjectProjection {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, raw_dim: usize, d: usize) -> Self {
        Self {
            w: store.add("state_core/projection/W", uniform_fan_in(d, raw_dim, raw_dim, rng)),
            b: store.add("state_core/projection/b", Matrix::zeros(1, d)),
            norm: LayerNorm::new(store, "state_core/projection/norm", d),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VisionStates {
    /// `(N+2) × d` (or `N × d` without pseudo-objects).
    pub rows: Var,
    pub n_objects: usize,
    pub null_index: Option<usize>,
    pub all_index: Option<usize>,
    pub d: usize,
}

impl VisionStates {
    pub fn n_slots(&self) -> usize {
        self.n_objects + usize::from(self.null_index.is_some()) + usize::from(self.all_index.is_some())
    }

    /// SHA-256 of the little-endian bytes of `O`.
    pub fn digest(&self, g: &Graph) -> String {
        digest_matrix(g.value(self.rows))
    }
}

pub fn digest_matrix(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for x in m.data() {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug)]
pub struct LanguageStates {
    pub rows: Var,
    /// Number of writes applied so far (caption bootstrap included).
    pub round: usize,
}

/// The pair `⟨O, S⟩`. `O` is shared by handle; copying the state never copies `O`.
#[derive(Clone, Copy, Debug)]
pub struct DialogueState {
    pub vision: VisionStates,
    pub language: LanguageStates,
}

/// `O = LayerNorm(ReLU(W_o O_f + b_o))`, then NULL and ALL rows when requested.
pub fn project_objects(
    g: &mut Graph,
    proj: &ObjectProjection,
    raw: &Matrix,
    with_pseudo_objects: bool,
) -> Result<VisionStates> {
    let (n, raw_dim) = raw.shape();
    if n == 0 {
        return Err(MdstError::Shape("no region features to project".into()));
    }
    let expected = g.store().get(proj.w).cols();
    if raw_dim != expected {
        return Err(MdstError::Shape(format!(
            "region features have width {raw_dim}, projection expects {expected}"
        )));
    }
    let x = g.constant(raw.clone());
    let w = g.param(proj.w);
    let b = g.param(proj.b);
    let h = g.matmul_nt(x, w)?;
    let h = g.add_row(h, b)?;
    let h = g.relu(h);
    let objects = proj.norm.forward(g, h)?;
    if !g.value(objects).is_finite() {
        return Err(MdstError::Numeric("object projection produced non-finite values".into()));
    }
    let d = g.shape(objects).1;
    if !with_pseudo_objects {
        return Ok(VisionStates {
            rows: objects,
            n_objects: n,
            null_index: None,
            all_index: None,
            d,
        });
    }
    let null = g.constant(Matrix::zeros(1, d));
    let mean_w = g.constant(Matrix::filled(1, n, 1.0 / n as f64));
    let all = g.matmul(mean_w, objects)?;
    let rows = g.concat_rows(&[objects, null, all])?;
    Ok(VisionStates {
        rows,
        n_objects: n,
        null_index: Some(n),
        all_index: Some(n + 1),
        d,
    })
}

/// `⟨O, S⁽⁰⁾⟩` with `S⁽⁰⁾ = 0` and round counter 0.
pub fn init_dialogue_state(g: &mut Graph, vision: VisionStates) -> DialogueState {
    let s = g.constant(Matrix::zeros(vision.n_slots(), vision.d));
    DialogueState {
        vision,
        language: LanguageStates { rows: s, round: 0 },
    }
}

/// Plain-matrix evaluation of [`MlpBlock`] in eval mode.
pub fn mlp_block(store: &ParamStore, block: &MlpBlock, x: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}
