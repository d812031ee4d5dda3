#ifndef SEMAPHORE_H
#define SEMAPHORE_H
class Semaphore {
public:
  void enter();
  void leave();
};
#endif
