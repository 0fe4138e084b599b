//! Cross-attention and the decoupled image branch.

use vgot::conditioning::{attention, compose_condition, Condition, TokenMatrix};
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let q = TokenMatrix::new(1, 2, vec![2.0, 0.0])?;
    let k = TokenMatrix::new(2, 2, vec![1.0, 0.0, -1.0, 0.0])?;
    let v = TokenMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0])?;
    let out = attention(&q, &k, &v)?;
    println!("attention output {:.4?}", out.row(0));

    let ip = TokenMatrix::new(1, 2, vec![0.0, 3.0])?;
    for scale in [0.0, 0.5, 1.0] {
        let c = compose_condition(&[2.0, 0.0], (&k, &v), Some((&ip, &ip)), scale)?;
        println!("ip_scale {scale}: {c:.4?}");
    }

    // identity channels follow the image embedding only
    let config = PipelineConfig::default();
    let params = config.world_params();
    let projector = params.projector()?;
    let encoder = params.text_encoder();
    let ip = vgot::conditioning::encode_text_mock("portrait", config.embedding_dim, 1)?;
    for prompt in ["a beach at noon", "a cave at night"] {
        let text = vgot::conditioning::TextEncoder::encode(&encoder, prompt)?;
        let mean = projector.mean(&Condition::with_ip(text, ip.clone(), 1.0)?)?;
        println!("{prompt:>16}: channel means {:.3?}", mean.channel_means());
    }
    Ok(())
}
