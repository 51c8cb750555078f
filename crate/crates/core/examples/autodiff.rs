//! Builds a small graph, takes a gradient, differentiates through it again
//! and compares both orders against finite differences.

use milearn::autodiff::{finite_difference_gradient, max_relative_error, Graph, Tensor};

fn loss(x: &[f64]) -> f64 {
    x.iter().map(|v| v.tanh() * v).sum::<f64>().powi(2)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x0 = vec![0.3, -1.2, 0.7];
    let g = Graph::new();
    let x = g.leaf(Tensor::new(&[3], x0.clone()));
    let y = x.tanh().mul(x)?.sum().square();
    let dx = g.grad(y, &[x], true)?[0];
    println!("f(x) = {:.6}", y.value().data()[0]);
    println!("df/dx = {:?}", dx.value().data());

    let fd = finite_difference_gradient(loss, &x0, 1e-6)?;
    println!("first order rel err {:.2e}", max_relative_error(dx.value().data(), &fd));

    // Second order: gradient of |df/dx|^2 through the recorded backward pass.
    let gnorm = dx.square().sum();
    let h = g.grad(gnorm, &[x], false)?[0];
    let fd2 = finite_difference_gradient(
        |p| finite_difference_gradient(loss, p, 1e-5).unwrap().iter().map(|v| v * v).sum(),
        &x0,
        1e-4,
    )?;
    println!("second order rel err {:.2e}", max_relative_error(h.value().data(), &fd2));
    Ok(())
}
