//! Compares one tape gradient against central differences, then fits a small
//! perceptron to XOR with Adam.
//!
//! cargo run --example autodiff_fit

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vqsad::autodiff::{Adam, Array, Mlp, ParamStore, Tape, Var};

fn loss(tape: &mut Tape, store: &ParamStore, net: &Mlp, x: &Array, y: &Array) -> vqsad::Result<Var> {
    let xv = tape.constant(x.clone());
    let out = net.forward(tape, store, xv)?;
    let p = tape.sigmoid(out);
    let yv = tape.constant(y.clone());
    let d = tape.sub(p, yv)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

fn main() -> vqsad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "xor", 2, 8, 1, &mut rng)?;
    let x = Array::matrix(4, 2, vec![0., 0., 0., 1., 1., 0., 1., 1.])?;
    let y = Array::column(vec![0., 1., 1., 0.]);
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, &store, &net, &x, &y)?;
    tape.backward(l, &mut store)?;
    let id = net.second.weight;
    let analytic = store.grad(id).get(0, 0);
    let h = 1e-6;
    let mut at = |delta: f64| -> vqsad::Result<f64> {
        let old = store.value(id).get(0, 0);
        store.value_mut(id).set(0, 0, old + delta);
        let mut t = Tape::new();
        let v = loss(&mut t, &store, &net, &x, &y)?;
        store.value_mut(id).set(0, 0, old);
        Ok(t.value(v).item())
    };
    let numeric = (at(h)? - at(-h)?) / (2.0 * h);
    println!("dL/dW2[0,0]: analytic {analytic:.9}, central difference {numeric:.9}");

    let mut adam = Adam::with_lr(0.05);
    for step in 0..=600 {
        store.zero_grad();
        let mut tape = Tape::new();
        let l = loss(&mut tape, &store, &net, &x, &y)?;
        tape.backward(l, &mut store)?;
        adam.step(&mut store);
        if step % 100 == 0 {
            println!("step {step:3} loss {:.6}", tape.value(l).item());
        }
    }

    Ok(())
}
