//! Finite-difference checks for every differentiable op.

use crate::matrix::Matrix;
use crate::nn::functional::{gumbel_noise, gumbel_softmax, gumbel_softmax_soft};
use crate::nn::gradcheck::{gradcheck_inputs, GradcheckConfig};
use crate::nn::graph::{Graph, Var};
use crate::rng::RngStream;

fn rand_mat(r: usize, c: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

/// Random projection to a scalar so every output coordinate matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let (r, c) = g.shape(y);
    let mut rng = RngStream::new(seed, 99);
    let w = g.constant(rand_mat(r, c, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum_all(p)
}

fn check(inputs: &[Matrix], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut rng = RngStream::new(7, 7);
    let rep = gradcheck_inputs(
        inputs,
        |g, v| {
            let y = f(g, v);
            Ok(project(g, y, 11))
        },
        GradcheckConfig::default(),
        &mut rng,
    )
    .unwrap();
    assert!(rep.coords > 0);
    rep.max_rel_err
}

const TOL: f64 = 1e-6;

#[test]
fn activations_at_zero() {
    let mut g = Graph::new();
    let z = g.constant(Matrix::scalar(0.0));
    let s = g.sigmoid(z);
    let t = g.tanh(z);
    assert_eq!(g.value(s).item(), 0.5);
    assert_eq!(g.value(t).item(), 0.0);
}

#[test]
fn max_pool_routes_to_argmax() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::from_vec(3, 1, vec![1.0, 5.0, 3.0]).unwrap());
    let m = g.max_pool_rows(x).unwrap();
    assert_eq!(g.value(m).item(), 5.0);
    let gr = g.backward(m).unwrap();
    assert_eq!(gr.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn max_pool_tie_goes_to_first_row() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::from_vec(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
    let m = g.max_pool_rows(x).unwrap();
    let gr = g.backward(m).unwrap();
    assert_eq!(gr.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn gradcheck_matmuls() {
    let mut r = RngStream::new(1, 0);
    let a = rand_mat(4, 3, &mut r);
    let b = rand_mat(3, 5, &mut r);
    let bt = rand_mat(5, 3, &mut r);
    assert!(check(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[a, bt], |g, v| g.matmul_nt(v[0], v[1]).unwrap()) < TOL);
}

#[test]
fn gradcheck_elementwise() {
    let mut r = RngStream::new(2, 0);
    let a = rand_mat(3, 4, &mut r);
    let b = rand_mat(3, 4, &mut r);
    assert!(check(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[a.clone(), b], |g, v| g.mul(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.scale(v[0], -2.5)) < TOL);
    assert!(check(&[a.clone()], |g, v| g.add_scalar(v[0], 0.7)) < TOL);
    assert!(check(&[a.clone()], |g, v| g.relu(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.tanh(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.sigmoid(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.exp(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.abs(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.clamp(v[0], -0.5, 0.5)) < TOL);
    let pos = a.map(|x| x.abs() + 0.5);
    assert!(check(&[pos], |g, v| g.log(v[0])) < TOL);
}

#[test]
fn gradcheck_broadcasts() {
    let mut r = RngStream::new(3, 0);
    let x = rand_mat(5, 3, &mut r);
    let row = rand_mat(1, 3, &mut r);
    let col = rand_mat(5, 1, &mut r);
    assert!(check(&[x.clone(), row.clone()], |g, v| g.add_row(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[x.clone(), row.clone()], |g, v| g.mul_row(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[x, col], |g, v| g.mul_col(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&[row], |g, v| g.broadcast_rows(v[0], 4).unwrap()) < TOL);
}

#[test]
fn gradcheck_structural() {
    let mut r = RngStream::new(4, 0);
    let a = rand_mat(4, 3, &mut r);
    let b = rand_mat(4, 2, &mut r);
    assert!(check(&[a.clone(), b], |g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.slice_cols(v[0], 1, 2).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.slice_rows(v[0], 1, 2).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.reshape(v[0], 2, 6).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.gather_rows(v[0], &[3, 0, 0, 2]).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.max_pool_groups(v[0], 2).unwrap()) < TOL);
    assert!(check(&[a.clone()], |g, v| g.max_pool_rows(v[0]).unwrap()) < TOL);
}

#[test]
fn gradcheck_reductions_and_norms() {
    let mut r = RngStream::new(5, 0);
    let a = rand_mat(4, 6, &mut r);
    let gamma = rand_mat(1, 6, &mut r);
    let beta = rand_mat(1, 6, &mut r);
    assert!(check(&[a.clone()], |g, v| g.sum_all(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.mean_all(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.mean_rows(v[0])) < TOL);
    assert!(check(&[a.clone()], |g, v| g.softmax_rows(v[0])) < TOL);
    assert!(check(&[a, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap()) < TOL);
}

#[test]
fn gradcheck_cross_entropy() {
    let mut r = RngStream::new(6, 0);
    let logits = rand_mat(3, 4, &mut r);
    let err = check(&[logits], |g, v| g.cross_entropy(v[0], &[1, 3, 0]).unwrap());
    assert!(err < TOL, "{err}");
}

#[test]
fn cross_entropy_values() {
    let mut g = Graph::new();
    let x = g.constant(Matrix::zeros(2, 5));
    let l = g.cross_entropy(x, &[0, 4]).unwrap();
    assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-15);
    let y = g.constant(Matrix::from_vec(1, 2, vec![800.0, 0.0]).unwrap());
    let l = g.cross_entropy(y, &[0]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    assert!(g.cross_entropy(x, &[0, 5]).is_err());
}

#[test]
fn gradcheck_euler_rotation() {
    let mut r = RngStream::new(8, 0);
    let angles = rand_mat(3, 3, &mut r);
    let err = check(&[angles], |g, v| g.euler_rotation(v[0]).unwrap());
    assert!(err < TOL, "{err}");
}

#[test]
fn gradcheck_gumbel_soft() {
    let mut r = RngStream::new(9, 0);
    let logits = rand_mat(5, 2, &mut r);
    let noise = gumbel_noise((5, 2), &mut r);
    let err = check(&[logits], |g, v| gumbel_softmax_soft(g, v[0], &noise, 0.7).unwrap());
    assert!(err < TOL, "{err}");
}

#[test]
fn gumbel_rows_and_hard_mode() {
    let mut r = RngStream::new(10, 0);
    let mut g = Graph::new();
    let l = g.constant(rand_mat(50, 2, &mut r));
    let soft = gumbel_softmax(&mut g, l, 0.5, false, &mut r).unwrap();
    for row in 0..50 {
        let s: f64 = g.value(soft).row(row).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
    let hard = gumbel_softmax(&mut g, l, 0.5, true, &mut r).unwrap();
    for row in 0..50 {
        let v = g.value(hard).row(row);
        assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }
    assert!(gumbel_softmax(&mut g, l, 0.0, true, &mut r).is_err());
}

#[test]
fn gumbel_hard_marginal_matches_softmax() {
    // P(class 0) = softmax(ln 3, ln 1)[0] = 0.75 irrespective of tau.
    let mut r = RngStream::new(11, 0);
    let mut g = Graph::new();
    let n = 10_000;
    let logits = Matrix::from_vec(n, 2, (0..n).flat_map(|_| [3f64.ln(), 0.0]).collect()).unwrap();
    let l = g.constant(logits);
    let hard = gumbel_softmax(&mut g, l, 0.5, true, &mut r).unwrap();
    let first = (0..n).filter(|&i| g.value(hard).get(i, 0) == 1.0).count() as f64 / n as f64;
    assert!((first - 0.75).abs() <= 0.02, "{first}");
}

#[test]
fn straight_through_passes_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::from_vec(1, 2, vec![0.3, 0.7]).unwrap());
    let h = g.straight_through(x, Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap()).unwrap();
    let w = g.constant(Matrix::from_vec(1, 2, vec![2.0, 3.0]).unwrap());
    let p = g.mul(h, w).unwrap();
    let s = g.sum_all(p);
    assert_eq!(g.value(s).item(), 3.0);
    let gr = g.backward(s).unwrap();
    assert_eq!(gr.get(x).unwrap().data(), &[2.0, 3.0]);
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.constant(Matrix::zeros(2, 3));
    let b = g.constant(Matrix::zeros(3, 2));
    assert!(g.add(a, b).is_err());
    assert!(g.matmul(a, a).is_err());
    assert!(g.max_pool_groups(a, 4).is_err());
    assert!(g.backward(a).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Matrix::scalar(2.0));
    let x = g.leaf(Matrix::scalar(3.0));
    let y = g.mul(c, x).unwrap();
    let gr = g.backward(y).unwrap();
    assert!(gr.get(c).is_none());
    assert_eq!(gr.get(x).unwrap().item(), 2.0);
}
