fn main() {
    std::process::exit(recursive_lda::cli::main_with_args(std::env::args_os()));
}
