use clap::Parser;
use pubmech_cli::{execute, Cli};

fn main() {
    // exit code 2 is reserved for property violations
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        std::process::exit(code);
    });
    match execute(&cli) {
        Ok((output, written)) => {
            for line in &output.summary {
                println!("{line}");
            }
            for path in written {
                eprintln!("wrote {}", path.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
