fn main() {
    std::process::exit(herdsearch::harness::cli::main_with(std::env::args_os()));
}
