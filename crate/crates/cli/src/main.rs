use clap::Parser;

use pingtrace_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outputs) => {
            print!("{}", outputs.summary);
            for (name, _) in &outputs.files {
                println!("wrote {}", cli.out.join(name).display());
            }
            if let Some(e) = outputs.failure {
                eprintln!("error: {e}");
                std::process::exit(e.exit_code());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
