use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamSet, Real, Tensor, Var};

/// `h + GELU(h W_down + b_down) W_up + b_up` on the rows of `h`.
pub fn adapter_graph<T: Real>(g: &mut Graph<'_, T>, h: Var, w_down: Var, b_down: Var, w_up: Var, b_up: Var) -> Result<Var> {
    let z = g.matmul(h, w_down)?;
    let z = g.add_row(z, b_down)?;
    let z = g.gelu(z)?;
    let u = g.matmul(z, w_up)?;
    let u = g.add_row(u, b_up)?;
    g.add(h, u)
}

/// Attention over the identity path and `outputs`, per row of `h`.
///
/// Scores are the bilinear forms `<h Q, A_n(h) K>`; the softmax weights mix
/// the candidates, and the mixture is projected by `V`. Returns the fused
/// rows and the `[rows, N + 1]` weights, column 0 being the identity path.
pub fn fusion_graph<T: Real>(
    g: &mut Graph<'_, T>,
    h: Var,
    outputs: &[Var],
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    if outputs.is_empty() {
        return Err(Error::Config("fusion needs at least one adapter".into()));
    }
    let query = g.matmul(h, q)?;
    let cands: Vec<Var> = std::iter::once(h).chain(outputs.iter().copied()).collect();
    let mut scores = Vec::with_capacity(cands.len());
    for &c in &cands {
        let key = g.matmul(c, k)?;
        scores.push(g.row_dot(query, key)?);
    }
    let scores = g.concat_cols(&scores)?;
    let weights = g.softmax(scores)?;
    let mut mix = None;
    for (n, &c) in cands.iter().enumerate() {
        let a = g.col(weights, n)?;
        let term = g.mul_row_scalar(c, a)?;
        mix = Some(match mix {
            None => term,
            Some(m) => g.add(m, term)?,
        });
    }
    let out = g.matmul(mix.expect("at least two candidates"), v)?;
    Ok((out, weights))
}

fn row_constant(g: &mut Graph<'_, f32>, x: &[f32]) -> Result<Var> {
    g.constant(vec![1, x.len()], x.to_vec())
}

/// Single-vector adapter evaluation.
pub fn adapter_forward(h: &[f32], w_down: &Tensor, b_down: &Tensor, w_up: &Tensor, b_up: &Tensor) -> Result<Vec<f32>> {
    let empty = ParamSet::new();
    let mut g = Graph::<f32>::new(&empty);
    let hv = row_constant(&mut g, h)?;
    let wd = g.constant_tensor(w_down)?;
    let bd = g.constant_tensor(b_down)?;
    let wu = g.constant_tensor(w_up)?;
    let bu = g.constant_tensor(b_up)?;
    let out = adapter_graph(&mut g, hv, wd, bd, wu, bu)?;
    Ok(g.value(out).to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub output: Vec<f32>,
    /// Attention over `[identity, A_1, .., A_N]`.
    pub weights: Vec<f32>,
}

/// Single-vector fusion evaluation with the attention weights exposed.
pub fn fusion_forward(h: &[f32], outputs: &[Vec<f32>], q: &Tensor, k: &Tensor, v: &Tensor) -> Result<FusionOutput> {
    if outputs.iter().any(|o| o.len() != h.len()) {
        return Err(Error::shape("fusion_forward", "adapter outputs must match the input dimension"));
    }
    let empty = ParamSet::new();
    let mut g = Graph::<f32>::new(&empty);
    let hv = row_constant(&mut g, h)?;
    let outs = outputs.iter().map(|o| row_constant(&mut g, o)).collect::<Result<Vec<_>>>()?;
    let (qv, kv, vv) = (g.constant_tensor(q)?, g.constant_tensor(k)?, g.constant_tensor(v)?);
    let (out, w) = fusion_graph(&mut g, hv, &outs, qv, kv, vv)?;
    Ok(FusionOutput { output: g.value(out).to_vec(), weights: g.value(w).to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let h = [0.3, -1.2, 2.5];
        let wd = t(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let out = adapter_forward(&h, &wd, &t(&[2], &[0.1, -0.1]), &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn scalar_adapter_by_hand() {
        let one = t(&[1, 1], &[1.0]);
        let out = adapter_forward(&[2.0], &one, &t(&[1], &[0.0]), &one, &t(&[1], &[0.0])).unwrap();
        let phi = 0.5 * (1.0 + libm::erf(2.0 / std::f64::consts::SQRT_2));
        let expected = 2.0 + 2.0 * phi;
        assert!((out[0] as f64 - expected).abs() < 1e-6);
        assert!((out[0] - 3.9545).abs() < 1e-4);
    }

    #[test]
    fn output_width_is_model_width() {
        let h = [1.0; 5];
        let out = adapter_forward(&h, &Tensor::zeros(&[5, 7]), &Tensor::zeros(&[7]), &Tensor::zeros(&[7, 5]), &Tensor::zeros(&[5])).unwrap();
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn two_candidate_fusion_by_hand() {
        let i = Tensor::identity(2);
        let f = fusion_forward(&[1.0, 0.0], &[vec![0.0, 1.0]], &i, &i, &i).unwrap();
        let e = std::f64::consts::E;
        let a0 = e / (e + 1.0);
        assert!((f.weights[0] as f64 - a0).abs() < 1e-6);
        assert!((f.weights[1] as f64 - (1.0 - a0)).abs() < 1e-6);
        assert!((f.output[0] as f64 - a0).abs() < 1e-6);
        assert!((f.output[1] as f64 - (1.0 - a0)).abs() < 1e-6);
    }

    #[test]
    fn equal_candidates_get_uniform_weights() {
        let q = t(&[2, 2], &[0.3, -0.2, 0.7, 0.1]);
        let k = t(&[2, 2], &[-0.5, 0.4, 0.2, 0.9]);
        let v = t(&[2, 2], &[2.0, 0.0, 1.0, 1.0]);
        let h = vec![0.4, -1.1];
        let f = fusion_forward(&h, &[h.clone(), h.clone(), h.clone()], &q, &k, &v).unwrap();
        for w in &f.weights {
            assert!((w - 0.25).abs() < 1e-6);
        }
        assert!((f.output[0] - (0.4 * 2.0 - 1.1)).abs() < 1e-5);
        assert!((f.output[1] + 1.1).abs() < 1e-5);
    }
}
