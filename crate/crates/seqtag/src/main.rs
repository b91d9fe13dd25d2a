fn main() {
    std::process::exit(seqtag::cli::run());
}
