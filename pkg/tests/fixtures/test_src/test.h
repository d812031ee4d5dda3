class Test {
public:
  bool var;
  void methodA();
  void methodB();
  void methodC();
};
