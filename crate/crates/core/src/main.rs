use clap::Parser;

fn main() {
    let cli = pcabp::cli::Cli::parse();
    let res = pcabp::cli::init_threads().and_then(|_| pcabp::cli::run(cli));
    match res {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
