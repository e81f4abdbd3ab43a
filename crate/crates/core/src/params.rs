//! Named parameter blocks. Every model's parameter struct doubles as its own
//! gradient container: a gradient set is a value of the same type with the
//! same shapes.

use crate::error::{Error, Result};
use crate::tensor::{l2_norm, Mat, Vector};

pub trait ParamSet: Clone + Send + Sync {
    /// Visit every block in declaration order.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a [f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64]));

    /// Visit the `(rows, cols)` shape of every block; vectors report `(len, 1)`.
    fn visit_shapes(&self, f: &mut dyn FnMut(&'static str, (usize, usize)));

    /// A block reassembled as a matrix, for norms that need the shape.
    fn block_matrix(&self, name: &str) -> Option<Mat> {
        let mut shape = None;
        self.visit_shapes(&mut |n, s| {
            if n == name {
                shape = Some(s);
            }
        });
        let (r, c) = shape?;
        Mat::from_vec(r, c, self.block(name)?).ok()
    }

    fn block_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }

    fn block(&self, name: &str) -> Option<Vec<f64>> {
        let mut out = None;
        self.visit(&mut |n, v| {
            if n == name {
                out = Some(v.to_vec());
            }
        });
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.fill(0.0));
        z
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, v| out.extend_from_slice(v));
        out
    }

    fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// `self += alpha · other`, block by block. Shapes must match.
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        let mut blocks = Vec::new();
        other.visit(&mut |_, v| blocks.push(v));
        let mut next = blocks.into_iter();
        self.visit_mut(&mut |_, v| {
            let g = next.next().expect("parameter layouts differ");
            for (x, gi) in v.iter_mut().zip(g) {
                *x += alpha * gi;
            }
        });
    }

    /// Whether two sets have identical block names and lengths.
    fn same_layout(&self, other: &Self) -> bool {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.visit(&mut |n, v| a.push((n, v.len())));
        other.visit(&mut |n, v| b.push((n, v.len())));
        a == b
    }
}

pub trait BlockShape {
    fn block_shape(&self) -> (usize, usize);
}

impl BlockShape for Mat {
    fn block_shape(&self) -> (usize, usize) {
        self.shape()
    }
}

impl BlockShape for Vector {
    fn block_shape(&self) -> (usize, usize) {
        (self.len(), 1)
    }
}

/// Frobenius norm of one named gradient block.
pub fn grad_norm<P: ParamSet>(grads: &P, selector: &str) -> Result<f64> {
    grads
        .block(selector)
        .map(|b| l2_norm(&b))
        .ok_or_else(|| unknown_block(grads, selector))
}

pub(crate) fn unknown_block<P: ParamSet>(p: &P, selector: &str) -> Error {
    Error::Config(format!(
        "unknown parameter block `{selector}` (expected one of {:?})",
        p.block_names()
    ))
}

/// Implements [`ParamSet`] for a struct whose fields are all `Mat` or `Vector`.
macro_rules! impl_param_set {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::ParamSet for $ty {
            fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a [f64])) {
                $( f(stringify!($field), self.$field.as_ref()); )+
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64])) {
                $( f(stringify!($field), self.$field.as_mut()); )+
            }

            fn visit_shapes(&self, f: &mut dyn FnMut(&'static str, (usize, usize))) {
                $( f(stringify!($field), $crate::params::BlockShape::block_shape(&self.$field)); )+
            }
        }
    };
}

pub(crate) use impl_param_set;
