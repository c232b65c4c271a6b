fn main() {
    d3rq::cli::install_signal_handler();
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(d3rq::cli::run(&args));
}
