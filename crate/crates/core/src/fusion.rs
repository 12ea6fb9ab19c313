//! Query-conditioned pooling of trigger tokens and the adaptive sigmoid gate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::math::{sigmoid, softmax};
use crate::{Error, Result};

/// Attention pooling of the trigger-token rows `values` under `query`.
#[derive(Debug, Clone)]
pub struct Attended {
    pub weights: Array1<f64>,
    pub output: Array1<f64>,
}

/// `α = softmax(t_i · query)`, output `Σ α_i t_i`.
pub fn attend(values: ArrayView2<f64>, query: ArrayView1<f64>) -> Result<Attended> {
    if values.nrows() == 0 {
        return Err(Error::invalid("attention over an empty trigger span"));
    }
    if values.ncols() != query.len() {
        return Err(Error::invalid(format!(
            "trigger vectors have width {} but the query has {}",
            values.ncols(),
            query.len()
        )));
    }
    let weights = softmax(values.dot(&query).view());
    let output = weights.dot(&values);
    Ok(Attended { weights, output })
}

/// Gradients of `attend` given the output gradient.
pub fn attend_backward(
    values: ArrayView2<f64>,
    query: ArrayView1<f64>,
    attended: &Attended,
    d_output: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let alpha = &attended.weights;
    let d_alpha = values.dot(&d_output);
    let mean = alpha.dot(&d_alpha);
    let d_logits = alpha * &(d_alpha - mean);
    let mut d_values = Array2::zeros(values.raw_dim());
    for (i, mut row) in d_values.rows_mut().into_iter().enumerate() {
        row.scaled_add(alpha[i], &d_output);
        row.scaled_add(d_logits[i], &query);
    }
    let d_query = d_logits.dot(&values);
    (d_values, d_query)
}

/// `σ(μ) ⊙ first + (1 − σ(μ)) ⊙ second`.
pub fn gate_fuse(first: ArrayView1<f64>, second: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<Array1<f64>> {
    if first.len() != second.len() || first.len() != mu.len() {
        return Err(Error::invalid(format!(
            "gate inputs have lengths {}, {} and gate {}",
            first.len(),
            second.len(),
            mu.len()
        )));
    }
    let gate = mu.mapv(sigmoid);
    Ok(&gate * &first + &(1.0 - &gate) * &second)
}

/// Gradients of `gate_fuse` with respect to `(first, second, mu)`.
pub fn gate_fuse_backward(
    first: ArrayView1<f64>,
    second: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    d_output: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let gate = mu.mapv(sigmoid);
    let d_first = &gate * &d_output;
    let d_second = (1.0 - &gate) * d_output;
    let d_mu = &d_output * &(&first - &second) * &gate * &(1.0 - &gate);
    (d_first, d_second, d_mu)
}

/// Unweighted mean of the trigger rows; replaces the gate in the fusion ablation.
pub fn mean_pool(values: ArrayView2<f64>) -> Result<Array1<f64>> {
    values
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::invalid("mean pooling over an empty trigger span"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn singleton_attention_is_identity() {
        let t = array![[0.3, -1.2, 4.0]];
        let out = attend(t.view(), array![9.0, 1.0, -2.0].view()).unwrap();
        assert_eq!(out.output, t.row(0));
        assert_eq!(out.weights, array![1.0]);
    }

    #[test]
    fn equal_values_pool_to_themselves() {
        let t = array![[0.5, 2.0], [0.5, 2.0]];
        let out = attend(t.view(), array![1.0, -1.0].view()).unwrap();
        assert_eq!(out.weights, array![0.5, 0.5]);
        assert_eq!(out.output, array![0.5, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_tokens() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let out = attend(t.view(), array![1.0, 0.0].view()).unwrap();
        let e = std::f64::consts::E;
        assert!((out.weights[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out.output[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((out.output[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn attention_errors() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(attend(empty.view(), array![1.0, 0.0].view()).is_err());
        assert!(attend(array![[1.0]].view(), array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn zero_gate_halves() {
        let out = gate_fuse(array![2.0, -4.0].view(), array![0.0, 1.0].view(), array![0.0, 0.0].view()).unwrap();
        assert_eq!(out, array![1.0, -1.5]);
    }

    #[test]
    fn saturated_gate_selects() {
        let out = gate_fuse(array![1.0, 1.0].view(), array![0.0, 0.0].view(), array![20.0, -20.0].view()).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-8);
        assert!(out[1].abs() < 1e-8);
    }

    #[test]
    fn equal_inputs_ignore_gate() {
        let h = array![0.25, -3.0, 7.5];
        let out = gate_fuse(h.view(), h.view(), array![5.0, -1.0, 0.3].view()).unwrap();
        for (a, b) in out.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_length_mismatch() {
        assert!(gate_fuse(array![1.0].view(), array![1.0, 2.0].view(), array![0.0].view()).is_err());
    }

    #[test]
    fn mean_pool_averages_rows() {
        let t = array![[1.0, 2.0], [3.0, 6.0]];
        assert_eq!(mean_pool(t.view()).unwrap(), array![2.0, 4.0]);
    }
}
