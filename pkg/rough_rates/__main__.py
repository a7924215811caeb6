from rough_rates.cli import main

raise SystemExit(main())
