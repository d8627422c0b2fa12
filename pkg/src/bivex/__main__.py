from bivex.cli import main

main()
