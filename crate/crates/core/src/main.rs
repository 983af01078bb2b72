use clap::Parser;

fn main() {
    let cli = bsplace::cli::Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = bsplace::cli::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
