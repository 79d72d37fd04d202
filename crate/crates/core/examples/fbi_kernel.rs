//! FBI kernel F_λ: Gaussian closed form for n = 1, Fourier identity, fitted strip bounds.

use carleman_lab::fbi::{fourier_identity_error, gaussian_closed_form, kernel_decay_check, FbiKernel};
use num_complex::Complex64;

fn main() -> carleman_lab::Result<()> {
    let k1 = FbiKernel::new(1, 1.0, 3.0, 16)?;
    for z in [Complex64::new(0.5, 0.0), Complex64::new(1.0, 0.7), Complex64::new(-2.0, -1.5)] {
        println!("n=1 z={z} F={:.12e} closed={:.12e}", k1.f(z)?, gaussian_closed_form(z));
    }
    println!("n,fourier_err,C0,c0,c1,c2,violation");
    for n in [1, 2, 3] {
        let fourier = fourier_identity_error(&FbiKernel::new(n, 4.0, 0.0, 16)?)?;
        let fit = kernel_decay_check(&FbiKernel::new(n, 1.0, 3.0, 16)?, &[1.0, 4.0, 16.0], 8.0, 3.0, 0.5)?;
        println!("{n},{fourier:.2e},{:.4},{:.4},{:.4},{:.4},{:.2e}", fit.c0_big, fit.c0, fit.c1, fit.c2, fit.max_violation);
    }
    Ok(())
}
