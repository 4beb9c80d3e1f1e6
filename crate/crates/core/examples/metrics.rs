//! The four error metrics on small hand-checkable series.

use matnet::eval::{mae, mase, rmse, wmape};

fn main() -> anyhow::Result<()> {
    let y = [1.0, 2.0, 3.0];
    let yhat = [0.0, 1.0, 2.0];
    println!("rmse  {}", rmse(&y, &yhat)?);
    println!("mae   {}", mae(&y, &yhat)?);
    println!("wmape {}", wmape(&y, &yhat)?);
    println!("mase  {}", mase(&y, &yhat)?);
    // A flat actual series leaves MASE undefined.
    println!("flat  {}", mase(&[1.0, 1.0], &[0.0, 0.0]).unwrap_err());
    Ok(())
}
