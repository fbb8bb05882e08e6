use std::io::{self, BufReader};
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let code = dstqa::cli::run(std::env::args_os(), &mut input, &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
