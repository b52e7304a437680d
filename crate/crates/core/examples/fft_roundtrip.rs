//! Forward and inverse 2-D FFT of a multichannel tensor, plus Parseval.

use rartrack::math::{fft2d, ifft2d, Tensor3};

fn main() -> rartrack::error::Result<()> {
    let t = Tensor3::from_fn(16, 8, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 - 5.0);
    let spectrum = fft2d(&t)?;
    let back = ifft2d(&spectrum)?;

    let worst = t
        .data()
        .iter()
        .zip(back.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let energy: f64 = t.data().iter().map(|v| v * v).sum();
    let spectral: f64 = spectrum.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (16 * 8) as f64;

    println!("shape {:?}, DC of channel 0 = {:.3}", t.shape(), spectrum.get(0, 0, 0));
    println!("round trip max abs error {worst:.2e}");
    println!("energy {energy:.3} vs spectral {spectral:.3}");
    Ok(())
}
