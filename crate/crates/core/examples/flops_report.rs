//! Analytic operation counts at matched widths, checked against the
//! instrumented scalar on a small shape.

use dimwise::analysis::{count_dim_attention, flops_dim_attention, flops_token_attention};

fn main() -> dimwise::Result<()> {
    let n = 100;
    let token = flops_token_attention(n, 64, 8, true);
    let dim = flops_dim_attention(n, 64, 8, 1, true);
    for r in [&token, &dim] {
        println!("{} (N={n}, d=64, groups={}, convs={}):", r.variant, r.groups, r.convs);
        for c in &r.components {
            println!("  {:<18} {:>12}", c.name, c.total());
        }
        println!("  {:<18} {:>12}", "total", r.total);
    }
    println!("token / dim = {:.3}", token.total as f64 / dim.total as f64);

    let counted = count_dim_attention(9, 4, 2, 3, true, 0)?;
    let analytic = flops_dim_attention(9, 4, 2, 3, true).counts();
    println!("instrumented {counted:?} == analytic {analytic:?}: {}", counted == analytic);
    Ok(())
}
