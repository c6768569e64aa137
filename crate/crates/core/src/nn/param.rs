//! Trainable parameters, their gradients and running (ASGD) averages.

use super::{NnError, Tensor};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    /// Initializer tag recorded in checkpoints.
    pub initializer: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub asgd_avg: Option<Tensor>,
    pub asgd_count: u64,
    /// Whether ASGD averaging applies (output layer only).
    pub averaged: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, initializer: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            initializer: initializer.into(),
            value,
            grad,
            asgd_avg: None,
            asgd_count: 0,
            averaged: false,
        }
    }

    /// Folds the current value into the running mean:
    /// `avg ← avg + (value − avg) / (count + 1)`, which leaves a constant
    /// trajectory's average exactly constant.
    pub fn asgd_accumulate(&mut self) {
        match &mut self.asgd_avg {
            None => {
                self.asgd_avg = Some(self.value.clone());
                self.asgd_count = 1;
            }
            Some(avg) => {
                let n = self.asgd_count as f64;
                for (a, &v) in avg.data_mut().iter_mut().zip(self.value.data()) {
                    *a += (v - *a) / (n + 1.0);
                }
                self.asgd_count += 1;
            }
        }
    }

    /// The tensor used at prediction time: the running average when one has
    /// been accumulated, the raw value otherwise.
    pub fn prediction_value(&self) -> &Tensor {
        match (&self.asgd_avg, self.averaged) {
            (Some(avg), true) => avg,
            _ => &self.value,
        }
    }
}

/// An ordered collection of parameters shared by a model and its tapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    grads_fresh: bool,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub(crate) fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn mark_grads_fresh(&mut self) {
        self.grads_fresh = true;
    }

    pub fn grads_fresh(&self) -> bool {
        self.grads_fresh
    }

    /// Plain gradient descent: `value ← value − eta·grad` for every
    /// parameter, then clears the gradients.
    pub fn sgd_step(&mut self, eta: f64) -> Result<(), NnError> {
        if !self.grads_fresh {
            return Err(NnError::StaleGradient);
        }
        for p in &mut self.params {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()) {
                *v -= eta * *g;
                *g = 0.0;
            }
        }
        self.grads_fresh = false;
        Ok(())
    }

    /// Accumulates the running average of every parameter flagged for
    /// averaging.
    pub fn asgd_accumulate(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.averaged) {
            p.asgd_accumulate();
        }
    }

    /// Returns a copy whose averaged parameters carry their running mean as
    /// the value. The receiver keeps its raw values so training can continue.
    pub fn asgd_swap_in(&self) -> Result<ParamSet, NnError> {
        let mut out = self.clone();
        for p in out.params.iter_mut().filter(|p| p.averaged) {
            let avg = p
                .asgd_avg
                .clone()
                .ok_or_else(|| NnError::NoAverageAvailable(p.name.clone()))?;
            p.value = avg;
        }
        out.grads_fresh = false;
        Ok(out)
    }

    /// Like [`ParamSet::asgd_swap_in`] but falls back to the raw value for
    /// parameters that have not been averaged yet.
    pub fn prediction_params(&self) -> ParamSet {
        let mut out = self.clone();
        for p in out.params.iter_mut() {
            if let (true, Some(avg)) = (p.averaged, &p.asgd_avg) {
                p.value = avg.clone();
            }
        }
        out.grads_fresh = false;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter {
        let mut p = Parameter::new("w", "zero", Tensor::scalar(v));
        p.averaged = true;
        p
    }

    #[test]
    fn sgd_requires_backward() {
        let mut set = ParamSet::new();
        set.add(scalar_param(1.0));
        assert!(matches!(set.sgd_step(0.1), Err(NnError::StaleGradient)));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut set = ParamSet::new();
        let id = set.add(scalar_param(1.0));
        set.get_mut(id).grad.data_mut()[0] = 2.0;
        set.mark_grads_fresh();
        set.sgd_step(0.1).unwrap();
        assert!((set.get(id).value.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(set.get(id).grad.data()[0], 0.0);
    }

    #[test]
    fn two_steps_constant_grad() {
        let mut set = ParamSet::new();
        let id = set.add(scalar_param(1.0));
        for _ in 0..2 {
            set.get_mut(id).grad.data_mut()[0] = 0.5;
            set.mark_grads_fresh();
            set.sgd_step(0.2).unwrap();
        }
        assert!((set.get(id).value.data()[0] - (1.0 - 2.0 * 0.2 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut set = ParamSet::new();
        let id = set.add(scalar_param(3.0));
        set.mark_grads_fresh();
        set.sgd_step(0.5).unwrap();
        assert_eq!(set.get(id).value.data()[0], 3.0);
    }

    #[test]
    fn running_mean() {
        let mut p = scalar_param(1.0);
        p.asgd_accumulate();
        assert_eq!(p.asgd_avg.as_ref().unwrap().data()[0], 1.0);
        for v in [2.0, 3.0, 4.0] {
            p.value.data_mut()[0] = v;
            p.asgd_accumulate();
        }
        assert_eq!(p.asgd_count, 4);
        assert!((p.asgd_avg.as_ref().unwrap().data()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn swap_in_needs_average() {
        let mut set = ParamSet::new();
        set.add(scalar_param(1.0));
        assert!(matches!(
            set.asgd_swap_in(),
            Err(NnError::NoAverageAvailable(_))
        ));
        set.asgd_accumulate();
        let swapped = set.asgd_swap_in().unwrap();
        assert_eq!(swapped.get(ParamId(0)).value, set.get(ParamId(0)).value);
    }

    #[test]
    fn swap_in_keeps_raw_for_training() {
        let mut set = ParamSet::new();
        let id = set.add(scalar_param(1.0));
        set.asgd_accumulate();
        set.get_mut(id).value.data_mut()[0] = 3.0;
        set.asgd_accumulate();
        let pred = set.asgd_swap_in().unwrap();
        assert_eq!(pred.get(id).value.data()[0], 2.0);
        set.get_mut(id).grad.data_mut()[0] = 1.0;
        set.mark_grads_fresh();
        set.sgd_step(1.0).unwrap();
        assert_eq!(set.get(id).value.data()[0], 2.0);
        assert_eq!(set.get(id).asgd_avg.as_ref().unwrap().data()[0], 2.0);
    }
}
