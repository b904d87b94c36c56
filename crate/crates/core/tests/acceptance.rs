use std::process::ExitCode;
use std::time::Instant;

use heom_core::validation::Suite;

fn main() -> ExitCode {
    let suite = Suite::new();
    let checks: [fn(&Suite) -> heom_core::validation::CriterionResult; 9] = [
        Suite::criterion_1,
        Suite::criterion_2,
        Suite::criterion_3,
        Suite::criterion_4,
        Suite::criterion_5,
        Suite::criterion_6,
        Suite::criterion_7,
        Suite::criterion_8,
        Suite::criterion_9,
    ];
    let mut failed = 0;
    for check in checks {
        let start = Instant::now();
        let r = check(&suite);
        println!("{} [{:.1?}]", r.line(), start.elapsed());
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
