//! The differentiable core on its own: a two-layer MLP fitted to a noisy
//! sine with Adam, then checked against finite differences.

use adaptpoint::nn::{gradcheck_params, Adam, GradStore, GradcheckConfig, Graph, Mlp, MlpSpec, ParamStore};
use adaptpoint::{Matrix, RngStream};

fn main() -> adaptpoint::Result<()> {
    let mut rng = RngStream::new(1, 0);
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.05 * rng.normal()).collect();
    let x = Matrix::from_vec(n, 1, xs)?;
    let y = Matrix::from_vec(n, 1, ys)?;

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "fit", MlpSpec::new(&[1, 32, 1]), &mut rng)?;
    let loss_of = |store: &ParamStore| -> adaptpoint::Result<_> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let pred = mlp.forward(&mut g, &p, xv)?;
        let target = g.constant(y.clone());
        let d = g.sub(pred, target)?;
        let sq = g.mul(d, d)?;
        let loss = g.mean_all(sq);
        Ok((g, loss, p))
    };

    let mut adam = Adam::new(&store, 1e-2);
    for step in 0..=600 {
        let (g, loss, p) = loss_of(&store)?;
        if step % 150 == 0 {
            println!("step {step:>3}: mse {:.5}", g.value(loss).item());
        }
        let grads = g.backward(loss)?;
        let mut gs = GradStore::zeros_like(&store);
        gs.accumulate(&p, &grads, 1.0);
        adam.step(&mut store, &gs);
    }

    let rep = gradcheck_params(&mut store, |s| loss_of(s), GradcheckConfig::default(), &mut rng)?;
    println!(
        "gradcheck: {} coordinates, max relative error {:.2e}",
        rep.coords, rep.max_rel_err
    );
    Ok(())
}
