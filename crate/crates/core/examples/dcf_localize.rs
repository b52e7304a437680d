//! Trains a context-aware correlation filter on random features and finds a
//! known circular shift in the response peak.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rartrack::dcf::{locate, response, ContextSet, FilterModel};
use rartrack::math::{fft2d, gaussian_label, Tensor3};

fn main() -> rartrack::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut noise = |c| Tensor3::from_fn(32, 32, c, |_, _, _| rng.gen_range(-1.0..1.0));
    let target = noise(4);
    let contexts = (0..4).map(|_| noise(4)).collect();
    let cs = ContextSet::new(target.clone(), contexts)?;

    let label = fft2d(&gaussian_label(32, 32, 1.5, (0.0, 0.0))?)?;
    let model = FilterModel::train(&cs, &label, 1e-4, 0.1, 0.013)?;

    for (dx, dy) in [(0, 0), (3, -2), (-7, 5)] {
        let r = response(&model, &target.roll(dx, dy))?;
        let ((x, y), peak) = locate(&r);
        println!("shift ({dx:>2}, {dy:>2}) -> peak at ({x:>5.2}, {y:>5.2}), height {peak:.3}");
    }
    Ok(())
}
