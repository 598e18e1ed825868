//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! f(W, b) = Σ log(1 + exp(relu(X W + b)))

use bnn_skeleton::tensor::{Matrix, Tape};

fn loss(x: &Matrix, w: &Matrix, b: &Matrix) -> f64 {
    let tape = Tape::new();
    let h = tape.constant(x.clone()).matmul(tape.constant(w.clone())).unwrap();
    let h = h.add_row(tape.constant(b.clone())).unwrap().relu();
    h.exp().offset(1.0).ln().sum().item()
}

fn main() -> bnn_skeleton::error::Result<()> {
    let x = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
    let w = Matrix::from_fn(3, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
    let b = Matrix::row_vector(vec![0.05, -0.1]);

    let tape = Tape::new();
    let (wv, bv) = (tape.var(w.clone()), tape.var(b.clone()));
    let h = tape.constant(x.clone()).matmul(wv)?.add_row(bv)?.relu();
    let out = h.exp().offset(1.0).ln().sum();
    let grads = tape.gradient(out, &[wv, bv])?;
    println!("f = {:.6}, tape has {} nodes", out.item(), tape.len());

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let (mut up, mut dn) = (w.clone(), w.clone());
            up.set(i, j, w.get(i, j) + eps);
            dn.set(i, j, w.get(i, j) - eps);
            let fd = (loss(&x, &up, &b) - loss(&x, &dn, &b)) / (2.0 * eps);
            let ad = grads[0].get(i, j);
            println!("dW[{i},{j}]  tape {ad:+.8}  fd {fd:+.8}");
            worst = worst.max((ad - fd).abs());
        }
    }
    println!("max |tape - fd| = {worst:.2e}");
    Ok(())
}
