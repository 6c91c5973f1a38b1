//! Finite-difference checks of the autodiff engine, plus the quantizer and
//! absorbing-chain oracles. The same table `onecast selfcheck` prints.

use onecast::selfcheck::{render_table, run, SelfcheckOptions};

fn main() {
    let checks = run(&SelfcheckOptions { gradient_seeds: 5, ..SelfcheckOptions::default() });
    print!("{}", render_table(&checks));
}
