use std::io::{stderr, stdin, stdout};

use flowcq_service::cli::{run, Stdio};

fn main() {
    let code = run(
        std::env::args_os(),
        Stdio {
            input: &mut stdin().lock(),
            out: &mut stdout().lock(),
            err: &mut stderr().lock(),
        },
    );
    std::process::exit(code);
}
