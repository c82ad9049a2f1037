from hetnet.main import main

raise SystemExit(main())
