//! Saves a model, inspects the manifest, and reloads it bit for bit.

use dimwise::model::{encoder_forward, load, read_manifest, save, AttentionKind, BlockConfig, Model};

fn main() -> dimwise::Result<()> {
    let mut cfg = BlockConfig::tiny(50);
    cfg.attention = AttentionKind::DimMultiConv { groups: 2, convs: 2 };
    let model = Model::<f64>::new(cfg, 21)?;
    let path = std::env::temp_dir().join("dimwise-example.tckpt");
    save(&path, &model, 0, "seed = 21\n")?;

    let manifest = read_manifest(&path)?;
    println!("format v{}, {} tensors:", manifest.version, manifest.tensors.len());
    for t in manifest.tensors.iter().take(6) {
        println!("  {:<28} {:?} {} bytes @ {}", t.name, t.shape, t.bytes, t.offset);
    }

    let (back, _) = load::<f64>(&path)?;
    let ids = [5, 9, 13, 2];
    let same = encoder_forward(&ids, &model)? == encoder_forward(&ids, &back)?;
    println!("reloaded logits identical: {same}");
    Ok(())
}
