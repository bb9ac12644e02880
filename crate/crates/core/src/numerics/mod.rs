//! Dense tensors, reverse-mode differentiation, layers, and optimisation.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var, IGNORE};
pub use nn::{lstm_step, BiLstm, BiLstmStack, Embedding, Linear, Lstm, LstmState, LstmWeights, Mlp};
pub use optim::{accumulate, fit, smooth, Adam, AdamConfig, FitConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{matmul, softmax, DType, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // Finite inputs never produce NaN or Inf through the nonlinearities.
        #[test]
        fn ops_stay_finite(xs in proptest::collection::vec(-700.0f64..700.0, 1..16)) {
            let n = xs.len();
            let mut g = Graph::new();
            let x = g.variable(Tensor::matrix(1, n, xs).unwrap());
            let outs = [
                g.tanh(x),
                g.sigmoid(x),
                g.softmax(x),
                g.log_softmax(x),
                g.relu(x),
                g.layer_norm(x, 1e-5),
            ];
            for o in outs {
                prop_assert!(g.value(o).is_finite());
            }
            let z = g.constant(Tensor::zeros(&[1, n]));
            let z4 = g.concat_cols(&[x, x, x, x]);
            let hc = g.lstm_cell(z4, z);
            prop_assert!(g.value(hc).is_finite());
            let ce = g.cross_entropy(x, &[0]);
            prop_assert!(g.value(ce).is_finite());
            let grads = g.backward(ce);
            prop_assert!(grads.get(x).unwrap().is_finite());
        }
    }
}
