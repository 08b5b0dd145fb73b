from rbfuq.cli import main

main()
