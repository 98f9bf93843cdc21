from .cli_io import console

console()
