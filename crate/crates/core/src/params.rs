//! Flat parameter views.
//!
//! Every trainable object exposes its parameters through a visitor in a
//! fixed order. Gradients use the same flat layout, which keeps finite
//! difference checks and optimizer updates trivial. Orthogonal weights store
//! the raw matrix `W`; layers compute with `expm(W − Wᵀ)` and gradients are
//! first accumulated with respect to that effective matrix, then pulled back
//! through the exponential by [`pullback`].

use crate::error::Result;
use crate::linalg::{self, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Free,
    /// Effective matrix is `expm(W − Wᵀ)`.
    Orthogonal,
}

#[derive(Clone, Debug)]
pub struct Weight {
    raw: Mat,
    kind: WeightKind,
    eff: Mat,
}

impl Weight {
    pub fn free(m: Mat) -> Self {
        Weight { eff: m.clone(), raw: m, kind: WeightKind::Free }
    }

    pub fn orthogonal(raw: Mat) -> Result<Self> {
        let eff = linalg::orthogonalize(&raw)?;
        Ok(Weight { raw, kind: WeightKind::Orthogonal, eff })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn raw(&self) -> &Mat {
        &self.raw
    }

    /// The matrix the layer actually multiplies by.
    pub fn get(&self) -> &Mat {
        &self.eff
    }

    pub fn rows(&self) -> usize {
        self.raw.rows()
    }

    pub fn cols(&self) -> usize {
        self.raw.cols()
    }

    pub fn len(&self) -> usize {
        self.raw.rows() * self.raw.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set_raw(&mut self, values: &[f64]) {
        self.raw.data_mut().copy_from_slice(values);
        self.refresh();
    }

    fn refresh(&mut self) {
        self.eff = match self.kind {
            WeightKind::Free => self.raw.clone(),
            WeightKind::Orthogonal => linalg::orthogonalize(&self.raw).expect("square by construction"),
        };
    }

    /// Rescale a free weight to `W / max(1, ‖W‖₂)`; returns the norm before scaling.
    pub fn cap_norm(&mut self) -> f64 {
        let s = linalg::singular_value_range(&self.raw).1;
        if s > 1.0 && self.kind == WeightKind::Free {
            self.raw.scale_mut(1.0 / s);
            self.refresh();
        }
        s
    }
}

pub enum Param<'a> {
    Weight(&'a Weight),
    Values(&'a [f64]),
}

pub enum ParamMut<'a> {
    Weight(&'a mut Weight),
    Values(&'a mut [f64]),
}

impl Param<'_> {
    fn len(&self) -> usize {
        match self {
            Param::Weight(w) => w.len(),
            Param::Values(v) => v.len(),
        }
    }
}

pub trait Parameterized {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>));

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| match p {
            Param::Weight(w) => out.extend_from_slice(w.raw().data()),
            Param::Values(v) => out.extend_from_slice(v),
        });
        out
    }

    fn set_params(&mut self, values: &[f64]) {
        let mut off = 0;
        self.visit_params_mut(&mut |p| match p {
            ParamMut::Weight(w) => {
                let n = w.len();
                w.set_raw(&values[off..off + n]);
                off += n;
            }
            ParamMut::Values(v) => {
                let n = v.len();
                v.copy_from_slice(&values[off..off + n]);
                off += n;
            }
        });
        assert_eq!(off, values.len(), "parameter vector length mismatch");
    }
}

/// Convert a gradient taken with respect to effective weights into one with
/// respect to the stored raw parameters.
pub fn pullback<P: Parameterized + ?Sized>(obj: &P, grad: &mut [f64]) {
    let mut off = 0;
    obj.visit_params(&mut |p| {
        let n = p.len();
        if let Param::Weight(w) = p {
            if w.kind() == WeightKind::Orthogonal {
                let g = Mat::from_vec(w.rows(), w.cols(), grad[off..off + n].to_vec()).expect("shape");
                let d = linalg::orthogonalize_vjp(w.raw(), &g).expect("square");
                grad[off..off + n].copy_from_slice(d.data());
            }
        }
        off += n;
    });
}

/// Sequential carving of a gradient buffer in visitor order.
pub(crate) struct GradSlots<'a> {
    rest: &'a mut [f64],
}

impl<'a> GradSlots<'a> {
    pub fn new(buf: &'a mut [f64]) -> Self {
        GradSlots { rest: buf }
    }

    pub fn take(&mut self, n: usize) -> &'a mut [f64] {
        let buf = std::mem::take(&mut self.rest);
        let (head, tail) = buf.split_at_mut(n);
        self.rest = tail;
        head
    }

    pub fn finish(self) {
        debug_assert!(self.rest.is_empty(), "unused gradient slots: {}", self.rest.len());
    }
}
