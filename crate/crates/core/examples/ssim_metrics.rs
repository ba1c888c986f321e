//! SSIM between generated images, and its response to pixel noise.

use coadapt::generator::ToyImage;
use coadapt::linalg::seeded_rng;
use coadapt::metrics::ssim;
use coadapt::prompt::tokenize;
use coadapt::session::Engine;
use rand::Rng;
use rand_distr::Normal;

fn main() -> coadapt::Result<()> {
    let engine = Engine::default();
    let img = |t: &str| -> coadapt::Result<ToyImage> {
        Ok(engine.generator.generate(&tokenize(t, &engine.vocab)?)?.0)
    };
    let a = img("a golden meadow at dawn")?;
    for other in ["a golden meadow at dawn", "a golden meadow at dusk", "a frozen harbor at night"] {
        println!("{other:<28} {:.4}", ssim(&a, &img(other)?)?);
    }

    let mut rng = seeded_rng(3, 0);
    for sigma in [0.01, 0.05, 0.1, 0.2] {
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        let data = a.data.iter().map(|v| (v + rng.sample(noise)).clamp(0.0, 1.0)).collect();
        let noisy = ToyImage::new(a.height, a.width, a.channels, data)?;
        println!("noise sigma {sigma:<5} ssim {:.4}", ssim(&a, &noisy)?);
    }
    Ok(())
}
