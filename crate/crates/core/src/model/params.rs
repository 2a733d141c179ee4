use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one tensor inside the flat parameter vector, viewed as a
/// `rows x cols` matrix (`1 x n` for vectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a, T>(&self, data: &'a [T]) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot in bounds")
    }

    pub fn mat_mut<'a, T>(&self, data: &'a mut [T]) -> ArrayViewMut2<'a, T> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()])
            .expect("slot in bounds")
    }

    pub fn vec<'a, T>(&self, data: &'a [T]) -> ArrayView1<'a, T> {
        ArrayView1::from(&data[self.range()])
    }

    /// Disjoint mutable views of a weight and its bias.
    pub fn pair_mut<T>(
        w: Slot,
        b: Slot,
        data: &mut [T],
    ) -> (ArrayViewMut2<'_, T>, ArrayViewMut1<'_, T>) {
        assert!(
            w.offset + w.len() <= b.offset,
            "bias must follow its weight"
        );
        let (head, tail) = data.split_at_mut(b.offset);
        let wv =
            ArrayViewMut2::from_shape((w.rows, w.cols), &mut head[w.range()]).expect("slot shape");
        let bv = ArrayViewMut1::from(&mut tail[..b.len()]);
        (wv, bv)
    }

    pub fn vec_mut<'a, T>(&self, data: &'a mut [T]) -> ArrayViewMut1<'a, T> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Ordered named tensors packed into one flat vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Slot {
        let (rows, cols) = match shape {
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
            [] => (1, 1),
        };
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.len,
        });
        self.len += slot.len();
        slot
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Slot of a named tensor.
    pub fn slot(&self, name: &str) -> Option<Slot> {
        self.get(name).map(|t| {
            let (rows, cols) = match t.shape.as_slice() {
                [n] => (1, *n),
                [r, rest @ ..] => (*r, rest.iter().product()),
                [] => (1, 1),
            };
            Slot {
                offset: t.offset,
                rows,
                cols,
            }
        })
    }

    /// Errors listing every tensor whose name, shape or offset differs.
    pub fn check_compatible(&self, other: &[TensorSpec]) -> Result<()> {
        let mut problems = Vec::new();
        for (i, t) in self.tensors.iter().enumerate() {
            match other.get(i) {
                Some(o) if o == t => {}
                Some(o) => problems.push(format!(
                    "{}: expected {:?}, found {} {:?}",
                    t.name, t.shape, o.name, o.shape
                )),
                None => problems.push(format!("{}: missing", t.name)),
            }
        }
        for o in other.iter().skip(self.tensors.len()) {
            problems.push(format!("{}: unexpected tensor {:?}", o.name, o.shape));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "checkpoint does not match config: {}",
                problems.join("; ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing() {
        let mut l = Layout::default();
        let a = l.add("a", &[2, 3]);
        let b = l.add("b", &[4]);
        let c = l.add("c", &[2, 2, 2]);
        assert_eq!((a.offset, b.offset, c.offset, l.len), (0, 6, 10, 18));
        assert_eq!((c.rows, c.cols), (2, 4));
        assert_eq!(l.slot("b"), Some(b));
        let data: Vec<f32> = (0..18).map(|v| v as f32).collect();
        assert_eq!(a.mat(&data)[[1, 2]], 5.0);
        assert_eq!(b.vec(&data)[3], 9.0);
    }

    #[test]
    fn mismatch_lists_tensor() {
        let mut l = Layout::default();
        l.add("w", &[2, 3]);
        let mut other = l.tensors.clone();
        other[0].shape = vec![3, 2];
        let msg = l.check_compatible(&other).unwrap_err().to_string();
        assert!(msg.contains("w: expected [2, 3]"), "{msg}");
    }
}
