use std::sync::Arc;

use crate::error::{contract, Result};
use crate::params::ParamRefs;
use crate::tensor::{Real, Tensor};

/// The `m × d` soft prompt. `m = 0` is the promptless baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptMatrix<S> {
    d: usize,
    values: Option<Arc<Tensor<S>>>,
}

impl<S: Real> PromptMatrix<S> {
    pub fn empty(d: usize) -> Self {
        PromptMatrix { d, values: None }
    }

    pub fn new(values: Tensor<S>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(contract(format!("prompt matrix must be rank 2, got {:?}", values.shape())));
        }
        Ok(PromptMatrix {
            d: values.cols(),
            values: Some(Arc::new(values)),
        })
    }

    pub fn from_rows(d: usize, rows: &[Vec<S>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self::empty(d));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(contract(format!("prompt rows must have width {d}")));
        }
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn m(&self) -> usize {
        self.values.as_ref().map_or(0, |v| v.rows())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_none()
    }

    pub fn tensor(&self) -> Option<&Arc<Tensor<S>>> {
        self.values.as_ref()
    }

    pub fn row(&self, k: usize) -> &[S] {
        self.values.as_ref().expect("row of an empty prompt matrix").row_slice(k)
    }

    pub fn rows(&self) -> Vec<Vec<S>> {
        (0..self.m()).map(|k| self.row(k).to_vec()).collect()
    }

    /// Keeps only the `active` rows (0-based, in the given order); other rows
    /// are physically removed.
    pub fn select(&self, active: &[usize]) -> Result<Self> {
        let m = self.m();
        if let Some(&bad) = active.iter().find(|&&k| k >= m) {
            return Err(contract(format!("prompt index {bad} out of range for m = {m}")));
        }
        let rows: Vec<Vec<S>> = active.iter().map(|&k| self.row(k).to_vec()).collect();
        Self::from_rows(self.d, &rows)
    }

    /// Same shape, new values (used by attacks that swap in random rows).
    pub fn replace_rows(&self, rows: &[Vec<S>]) -> Result<Self> {
        if rows.len() != self.m() {
            return Err(contract(format!("expected {} replacement rows, got {}", self.m(), rows.len())));
        }
        Self::from_rows(self.d, rows)
    }

    pub fn parameter_count(&self) -> usize {
        self.m() * self.d
    }
}

impl<S: Real> ParamRefs<S> for PromptMatrix<S> {
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)> {
        self.values.iter().map(|v| ("prompts".to_string(), v)).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)> {
        self.values.iter_mut().map(|v| ("prompts".to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_removes_rows() {
        let p = PromptMatrix::<f64>::from_rows(2, &[vec![1., 1.], vec![2., 2.], vec![3., 3.]]).unwrap();
        let s = p.select(&[2, 0]).unwrap();
        assert_eq!(s.rows(), vec![vec![3., 3.], vec![1., 1.]]);
        assert!(p.select(&[]).unwrap().is_empty());
        assert!(p.select(&[3]).is_err());
        assert_eq!(p.select(&[0, 1, 2]).unwrap(), p);
    }
}
