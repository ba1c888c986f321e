//! Render a prompt, save the PNG, and print where each token's attention lands.
//!
//! cargo run --release --example generate_and_render -- "a misty harbor at dawn"

use coadapt::generator::render_png;
use coadapt::prompt::tokenize;
use coadapt::reward::clip_score;
use coadapt::session::Engine;

fn main() -> coadapt::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "a misty harbor at dawn".into());
    let engine = Engine::default();
    let prompt = tokenize(&text, &engine.vocab)?;
    let (image, stack) = engine.generator.generate(&prompt)?;

    let out = std::env::temp_dir().join("coadapt_generate.png");
    render_png(&image, &out)?;
    println!("{}x{} image written to {}", image.height, image.width, out.display());
    println!("score against its own prompt: {:.4}", clip_score(&image, &prompt)?);

    let (gh, gw) = (stack.grid_height, stack.grid_width);
    for (token, heat) in prompt.tokens().iter().zip(stack.token_heatmaps()) {
        let (peak, _) = heat
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        let mass = heat.iter().sum::<f64>() / heat.len() as f64;
        println!(
            "{:>10}  mass {:.3}  peak cell ({}, {}) of {gh}x{gw}",
            token.surface,
            mass,
            peak / gw,
            peak % gw
        );
    }
    Ok(())
}
