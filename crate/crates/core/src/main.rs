use clap::Parser;

fn main() {
    let cli = msnar::cli::Cli::parse();
    std::process::exit(msnar::cli::main_with(cli));
}
