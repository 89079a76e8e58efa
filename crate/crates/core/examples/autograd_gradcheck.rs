//! Builds a small expression on the tape, runs backward, and compares the
//! gradients against central finite differences.

use bevfuse::tensor::{gradcheck, Tape, Tensor};

fn main() -> bevfuse::Result<()> {
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(&[3, 2], vec![0.2, -0.4, 1.1, 0.6, -0.3, 0.9])?;
    let b = Tensor::new(&[2], vec![0.05, -0.1])?;

    // loss = mean(softmax(xW + b) ⊙ sigmoid(xW + b))
    let tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let h = xv.linear(wv, Some(bv))?;
    let loss = h.softmax_last()?.mul(h.sigmoid())?.mean();
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dW = {:?}", grads.get(wv).unwrap());

    let report = gradcheck::check(
        |_, v| {
            let h = v[0].linear(v[1], Some(v[2]))?;
            Ok(h.softmax_last()?.mul(h.sigmoid())?.mean())
        },
        &[x, w, b],
        1e-6,
        None,
    )?;
    println!(
        "finite differences: {} entries, max relative error {:.2e} ({})",
        report.checked,
        report.max_rel_err,
        if report.passes(1e-4) { "pass" } else { "FAIL" }
    );
    Ok(())
}
