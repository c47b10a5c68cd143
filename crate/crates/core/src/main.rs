use clap::Parser;

use apl_core::shell::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli).and_then(|o| o.render(cli.json)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
