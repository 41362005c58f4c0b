fn main() {
    std::process::exit(mindmesh_cli::run(std::env::args_os()));
}
