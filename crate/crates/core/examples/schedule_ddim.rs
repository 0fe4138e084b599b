//! Build the strided schedule, noise a latent, and walk it back with DDIM.

use vgot::diffusion::{add_noise, ddim_step, sample_reverse, FrameLatent, LatentShape};
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let config = PipelineConfig::default();
    let schedule = config.schedule()?;
    println!(
        "T = {}, alpha_bar(1) = {:.5}, alpha_bar(T) = {:.2e}",
        schedule.steps(),
        schedule.alpha_bar(1)?,
        schedule.alpha_bar(schedule.steps())?
    );

    let shape = LatentShape::new(2, 2, 2);
    let x0 = FrameLatent::from_vec(shape, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 0.25, 1.0])?;
    let eps = FrameLatent::gaussian(shape, &mut vgot::seed::stream(0, "example", &[]));
    let x_t = add_noise(&x0, &eps, 30, &schedule)?;
    // with the true noise a single step from t=30 lands exactly on x0
    let back = ddim_step(&x_t, &eps, 30, 0, &schedule)?;
    let err = back
        .data()
        .iter()
        .zip(x0.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("one-step inversion error {err:.2e}");

    // full reverse chain under the analytic world
    let backend = config.backend()?;
    let text = backend.text_encoder.encode("a lantern in the rain")?;
    let cond = vgot::conditioning::Condition::text_only(text);
    let sample = sample_reverse(backend.denoiser.as_ref(), &cond, &backend.schedule, backend.shape, 7)?;
    println!("sample channel means {:.3?}", sample.channel_means());
    Ok(())
}
