//! The three attention edits on one prompt, with and without injection.

use coadapt::edit::{AscentConfig, EditController, SoftAlignment};
use coadapt::metrics::ssim;
use coadapt::prompt::{apply_edit, compute_alignment, tokenize, EditOp};
use coadapt::reward::clip_score;
use coadapt::session::Engine;

fn main() -> coadapt::Result<()> {
    let engine = Engine::default();
    let gen = &engine.generator;
    let vocab = &engine.vocab;
    let base = tokenize("a tranquil garden at dusk", vocab)?;
    let (base_img, base_stack) = gen.generate(&base)?;
    let tau = engine.session.tau_inj;

    let swap = apply_edit(&base, &EditOp::WordSwap { index: 2, tokens: vocab.tokens(&["lake"]) })?;
    let (plain, _) = gen.generate(&swap)?;
    let ctrl = EditController::word_swap(tau, AscentConfig::default());
    let (injected, _) = gen.regenerate_with_controller(&swap, &base_stack, &ctrl)?;
    report("word swap", &base_img, &plain, &injected, &swap)?;

    let add = apply_edit(&base, &EditOp::AddPhrase { position: 5, tokens: vocab.tokens(&["with", "lanterns"]) })?;
    let (plain, _) = gen.generate(&add)?;
    let align = compute_alignment(&base, &add);
    let ctrl = EditController::add_phrase(SoftAlignment::from_hard(&align, base.len())?, tau, AscentConfig::default());
    let (injected, _) = gen.regenerate_with_controller(&add, &base_stack, &ctrl)?;
    report("add phrase", &base_img, &plain, &injected, &add)?;

    for c in [0.0, 1.0, 2.0] {
        let rw = apply_edit(&base, &EditOp::Reweight { index: 2, scale: c })?;
        let ctrl = EditController::reweight(2, c, 1.0, AscentConfig::default())?;
        let (img, _) = gen.regenerate_with_controller(&rw, &base_stack, &ctrl)?;
        println!(
            "reweight \"garden\" to {c:.1}: ssim to base {:.4}, identical {}",
            ssim(&base_img, &img)?,
            img == base_img
        );
    }
    Ok(())
}

fn report(
    name: &str,
    base: &coadapt::generator::ToyImage,
    plain: &coadapt::generator::ToyImage,
    injected: &coadapt::generator::ToyImage,
    p: &coadapt::prompt::Prompt,
) -> coadapt::Result<()> {
    println!(
        "{name:<10} plain: ssim {:.4} score {:.4} | injected: ssim {:.4} score {:.4}",
        ssim(base, plain)?,
        clip_score(plain, p)?,
        ssim(base, injected)?,
        clip_score(injected, p)?
    );
    Ok(())
}
