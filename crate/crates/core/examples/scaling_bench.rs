//! Wall-clock scaling of both attention families with sequence length.
//!
//! Pass `--full` for the 1024..4096 sweep; the default is a quick one.

use dimwise::analysis::{bench_sweep, BenchVariant};

fn main() -> dimwise::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let ns: &[usize] = if full { &[1024, 2048, 4096] } else { &[128, 256, 512] };
    let variants = [BenchVariant::Token, BenchVariant::Dim];
    let sweep = bench_sweep(&variants, ns, &[64], 5, 0)?;
    print!("{}", sweep.to_csv());
    for v in variants {
        let ratios: Vec<String> = sweep.time_ratios(v, 64).iter().map(|r| format!("{r:.2}")).collect();
        println!("# {} doubling ratios: {}", v.name(), ratios.join(", "));
    }
    Ok(())
}
