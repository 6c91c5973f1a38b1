//! Tokens needed per 96-step window under each encoding scheme.

use onecast::data::{token_budget, TokenMethod};

fn main() -> onecast::Result<()> {
    let methods = [TokenMethod::Patching, TokenMethod::PerValue, TokenMethod::Text, TokenMethod::Onecast];
    println!("{:<10}{:>10}{:>10}{:>10}{:>10}", "channels", "patching", "per-value", "text", "onecast");
    for channels in [11, 107, 862, 2000] {
        let cells = methods
            .iter()
            .map(|m| token_budget(*m, 96, 16, channels, 3, 437).map(|n| format!("{n:>10}")))
            .collect::<onecast::Result<String>>()?;
        println!("{channels:<10}{cells}");
    }
    Ok(())
}
